"""Stiefel-manifold geometry.

Two scale conventions share one point type: ``Scale.UNIT`` frames satisfy
``X^T X = I`` and ``Scale.SQRTN`` frames satisfy ``X^T X = N I``. Every
operation below is written in terms of ``scale2`` (1 or N) so the two never
get mixed silently.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import ConventionError, DimensionError, SingularMatrixError

HARD_TOL = 1e-10
DRIFT_TOL = 1e-8


class Scale(enum.Enum):
    UNIT = "unit"
    SQRTN = "sqrtN"

    def squared(self, N: int) -> float:
        return 1.0 if self is Scale.UNIT else float(N)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StiefelPoint:
    """An ``N x r`` frame with ``X^T X = scale2 * I``."""

    data: np.ndarray
    scale: Scale = Scale.UNIT

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.flags.writeable:
            data = _frozen(data)
        if data.ndim != 2:
            raise DimensionError(f"expected a 2-d array, got shape {data.shape}")
        N, r = data.shape
        if r < 1 or N < r:
            raise DimensionError(f"need N >= r >= 1, got N={N}, r={r}")
        object.__setattr__(self, "data", data)

    @classmethod
    def checked(cls, data, scale: Scale = Scale.UNIT, tol: float = HARD_TOL) -> "StiefelPoint":
        """Build a point and verify the orthogonality invariant."""
        X = cls(np.asarray(data, dtype=float), scale)
        err = X.orthogonality_error()
        if err > tol:
            raise DimensionError(f"frame violates X^T X = scale^2 I (error {err:.3e} > {tol:.1e})")
        return X

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def r(self) -> int:
        return self.data.shape[1]

    @property
    def scale2(self) -> float:
        return self.scale.squared(self.N)

    def orthogonality_error(self) -> float:
        """Frobenius norm of ``X^T X / scale2 - I``."""
        X = self.data
        return float(np.linalg.norm(X.T @ X / self.scale2 - np.eye(self.r)))

    def rescaled(self, scale: Scale) -> "StiefelPoint":
        """The same frame expressed in another convention."""
        factor = np.sqrt(scale.squared(self.N) / self.scale2)
        return StiefelPoint(self.data * factor, scale)


@dataclass(frozen=True, eq=False)
class TangentVector:
    data: np.ndarray
    base: StiefelPoint

    def __post_init__(self):
        if self.data.shape != self.base.data.shape:
            raise DimensionError(f"tangent shape {self.data.shape} != base shape {self.base.data.shape}")

    def tangency_error(self) -> float:
        X, U = self.base.data, self.data
        return float(np.linalg.norm(X.T @ U + U.T @ X))


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    data: np.ndarray

    @property
    def r(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class OverlapGram:
    """``G = M^T M`` together with its eigenvalues sorted in decreasing order."""

    data: np.ndarray
    eigenvalues: np.ndarray


def _as_array(A) -> np.ndarray:
    if isinstance(A, (StiefelPoint, TangentVector, CorrelationMatrix, OverlapGram)):
        return A.data
    return np.asarray(A, dtype=float)


def _check_shape(X: StiefelPoint, A: np.ndarray):
    if A.shape != X.data.shape:
        raise DimensionError(f"shape mismatch: {A.shape} vs {X.data.shape}")


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def inv_sqrt_psd(S) -> np.ndarray:
    """Inverse square root of a symmetric positive definite matrix.

    Parameters
    ----------
    S : array_like, shape (r, r)
        Symmetric positive definite matrix.

    Returns
    -------
    ndarray, shape (r, r)
        Symmetric ``T`` with ``T S T = I``.

    Raises
    ------
    SingularMatrixError
        If an eigenvalue is below ``1e-12 * ||S||``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    w, Q = np.linalg.eigh(sym(S))
    floor = 1e-12 * max(np.linalg.norm(S), np.finfo(float).tiny)
    if w.min() <= floor:
        raise SingularMatrixError(f"matrix is not positive definite (min eigenvalue {w.min():.3e})")
    T = (Q / np.sqrt(w)) @ Q.T
    return sym(T)


def sample_invariant(N: int, r: int, scale: Scale, rng: np.random.Generator) -> StiefelPoint:
    """Draw from the rotation-invariant measure on the Stiefel manifold.

    Uses ``X = Z (Z^T Z / N)^{-1/2}`` with i.i.d. standard normal ``Z``,
    then rescales to the requested convention.
    """
    if N < 1 or r < 1 or N < r:
        raise DimensionError(f"need N >= r >= 1, got N={N}, r={r}")
    Z = rng.standard_normal((N, r))
    X = Z @ inv_sqrt_psd(Z.T @ Z / N)
    if scale is Scale.UNIT:
        X = X / np.sqrt(N)
    return StiefelPoint(X, scale)


def project_tangent(X: StiefelPoint, A) -> TangentVector:
    """Orthogonal projection ``A - X sym(X^T A) / scale2`` onto the tangent space at X."""
    A = _as_array(A)
    _check_shape(X, A)
    Xd = X.data
    return TangentVector(A - Xd @ sym(Xd.T @ A) / X.scale2, X)


def riemannian_gradient(X: StiefelPoint, g) -> TangentVector:
    """Riemannian gradient from a Euclidean gradient ``g``.

    ``g - X (X^T g + g^T X) / (2 scale2)``, which coincides with the tangent
    projection of ``g``.
    """
    g = _as_array(g)
    _check_shape(X, g)
    Xd = X.data
    return TangentVector(g - Xd @ (Xd.T @ g + g.T @ Xd) / (2.0 * X.scale2), X)


def polar_retract(X: StiefelPoint, U) -> StiefelPoint:
    """Polar retraction: the orthonormal polar factor of ``X + U``.

    Computed as ``(X + U) ((X + U)^T (X + U) / scale2)^{-1/2}``, which equals
    ``(X + U)(I + U^T U / scale2)^{-1/2}`` for tangent U at an exact point but,
    unlike that form, does not let rounding errors in X accumulate.
    """
    Ud = _as_array(U)
    _check_shape(X, Ud)
    if not np.any(Ud):
        return X
    Y = X.data + Ud
    return StiefelPoint(Y @ inv_sqrt_psd(Y.T @ Y / X.scale2), X.scale)


def correlation_matrix(V: StiefelPoint, X: StiefelPoint) -> CorrelationMatrix:
    """``M[i, j] = <v_i, x_j> / scale2``."""
    if V.scale is not X.scale:
        raise ConventionError(f"convention mismatch: V is {V.scale.value}, X is {X.scale.value}")
    if V.N != X.N:
        raise DimensionError(f"ambient dimensions differ: {V.N} vs {X.N}")
    return CorrelationMatrix(V.data.T @ X.data / X.scale2)


def overlap_gram(M) -> OverlapGram:
    """``G = M^T M`` and its eigenvalues in decreasing order."""
    Md = _as_array(M)
    G = sym(Md.T @ Md)
    theta = np.linalg.eigvalsh(G)[::-1]
    return OverlapGram(G, theta)


def tangent_basis(X: StiefelPoint, metric: str = "euclidean") -> np.ndarray:
    """Orthonormal basis of the tangent space at X.

    ``metric="euclidean"`` uses the metric inherited from the ambient space,
    ``"canonical"`` the metric that weights the skew block ``X^T U`` by one
    half. Returns an array of shape ``(dim, N, r)`` with
    ``dim = N r - r (r + 1) / 2``.
    """
    if metric not in ("euclidean", "canonical"):
        raise ValueError(f"unknown metric {metric!r}")
    N, r = X.N, X.r
    Q = X.data / np.sqrt(X.scale2)
    perp = null_space(Q.T)
    skew_norm = np.sqrt(2.0) if metric == "euclidean" else 1.0
    basis = []
    for a in range(r):
        for b in range(a + 1, r):
            Om = np.zeros((r, r))
            Om[a, b], Om[b, a] = 1.0, -1.0
            basis.append(Q @ Om / skew_norm)
    for k in range(N - r):
        for a in range(r):
            B = np.zeros((N, r))
            B[:, a] = perp[:, k]
            basis.append(B)
    return np.array(basis).reshape(-1, N, r)
