"""Spiked tensor model: planted frames, noise tensors, observations and gradients.

The observation is ``Y = W + sqrt(N) sum_i lambda_i v_i^{(x) p}`` with unit
spikes ``v_i`` and i.i.d. noise ``W``. The loss minimized by the dynamics is

    L(X; Y) = - sum_i lambda_i <Y, x_i^{(x) p}>,

so descent increases the correlations with the spikes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import BudgetError, ConventionError, DimensionError, UnsupportedError
from .manifold import (
    Scale,
    StiefelPoint,
    TangentVector,
    correlation_matrix,
    riemannian_gradient,
    sample_invariant,
)

DEFAULT_MEMORY_BUDGET = 10**8
# entries per independently keyed generator block of a streamed tensor
BLOCK_SIZE = 1 << 15
MAX_STREAMED_ORDER = 8
# entries handled at once when streaming contractions
SLAB_ENTRIES = 1 << 21


class NoiseDist(enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


class GradMode(enum.Enum):
    EXACT = "exact"
    FIRST_MODE = "first_mode"


@dataclass(frozen=True)
class NoiseSpec:
    dist: NoiseDist = NoiseDist.GAUSSIAN
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class SpikedModel:
    """Problem instance.

    ``planted=False`` gives the null model: observations carry no spike while
    the lambdas still weight the loss.
    """

    N: int
    r: int
    p: int
    lambdas: tuple
    V: StiefelPoint
    planted: bool = True

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        object.__setattr__(self, "lambdas", lam)
        if self.p < 2:
            raise DimensionError(f"tensor order must be >= 2, got p={self.p}")
        if self.r < 1 or self.N < self.r:
            raise DimensionError(f"need N >= r >= 1, got N={self.N}, r={self.r}")
        if len(lam) != self.r:
            raise DimensionError(f"expected {self.r} lambdas, got {len(lam)}")
        if any(not x > 0 for x in lam):
            raise ValueError(f"lambdas must be strictly positive, got {lam}")
        if any(a < b for a, b in zip(lam, lam[1:])):
            raise ValueError(f"lambdas must be sorted non-increasing, got {lam}")
        if self.V.scale is not Scale.UNIT:
            raise ConventionError("planted frame must use the unit convention")
        if self.V.data.shape != (self.N, self.r):
            raise DimensionError(f"V has shape {self.V.data.shape}, expected {(self.N, self.r)}")

    @property
    def lam(self) -> np.ndarray:
        return np.array(self.lambdas)

    def V_as(self, scale: Scale) -> StiefelPoint:
        return self.V.rescaled(scale)


def make_model(
    N: int,
    r: int,
    p: int,
    lambdas: Sequence[float],
    rng: np.random.Generator | None = None,
    V: StiefelPoint | np.ndarray | None = None,
    planted: bool = True,
) -> SpikedModel:
    """Build a model, drawing V from the invariant measure when not given."""
    if V is None:
        if rng is None:
            raise ValueError("either rng or V must be provided")
        if N < r:
            raise DimensionError(f"need N >= r, got N={N}, r={r}")
        V = sample_invariant(N, r, Scale.UNIT, rng)
    elif not isinstance(V, StiefelPoint):
        V = StiefelPoint.checked(V, Scale.UNIT)
    return SpikedModel(N, r, p, tuple(lambdas), V, planted)


def _philox_key(seed) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


class NoiseTensor:
    """Order-p noise tensor, either held densely or generated on demand.

    Streamed entries come from counter-based Philox streams: linear index ``k``
    lives in block ``k // BLOCK_SIZE``, whose stream is keyed by the seed and
    started at a block-specific counter. Every entry is therefore a pure
    function of ``(seed, index)`` and both backends agree exactly.
    """

    def __init__(self, N: int, p: int, spec: NoiseSpec, seed=None, dense: np.ndarray | None = None):
        self.N = int(N)
        self.p = int(p)
        self.spec = spec
        self.seed = seed
        self._dense = None
        if dense is not None:
            dense = np.array(dense, dtype=float)
            if dense.shape != (N,) * p:
                raise DimensionError(f"dense tensor has shape {dense.shape}, expected {(N,) * p}")
            dense.setflags(write=False)
            self._dense = dense
            self._key = None
        else:
            if seed is None:
                raise ValueError("streamed tensors need a seed")
            if p > MAX_STREAMED_ORDER:
                raise UnsupportedError(f"streamed backend supports p <= {MAX_STREAMED_ORDER}, got {p}")
            self._key = _philox_key(seed)

    @classmethod
    def from_array(cls, W: np.ndarray, spec: NoiseSpec | None = None) -> "NoiseTensor":
        W = np.asarray(W, dtype=float)
        return cls(W.shape[0], W.ndim, spec or NoiseSpec(), dense=W)

    @classmethod
    def zeros(cls, N: int, p: int) -> "NoiseTensor":
        return cls(N, p, NoiseSpec(), dense=np.zeros((N,) * p))

    @property
    def backend(self) -> str:
        return "materialized" if self._dense is not None else "streamed"

    @property
    def size(self) -> int:
        return self.N**self.p

    def _block(self, b: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=self._key, counter=[0, 0, b, 0]))
        sigma = self.spec.sigma
        if self.spec.dist is NoiseDist.GAUSSIAN:
            return sigma * gen.standard_normal(BLOCK_SIZE)
        return np.where(gen.random(BLOCK_SIZE) < 0.5, -sigma, sigma)

    def entries(self, start: int, stop: int) -> np.ndarray:
        """Entries at linear (C-order) indices ``start <= k < stop``."""
        if not 0 <= start <= stop <= self.size:
            raise IndexError(f"range [{start}, {stop}) outside tensor of size {self.size}")
        if self._dense is not None:
            return self._dense.reshape(-1)[start:stop]
        if start == stop:
            return np.empty(0)
        b0, b1 = start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE
        vals = np.concatenate([self._block(b) for b in range(b0, b1 + 1)])
        off = b0 * BLOCK_SIZE
        return vals[start - off : stop - off]

    def entry(self, index: Sequence[int]) -> float:
        k = int(np.ravel_multi_index(tuple(index), (self.N,) * self.p))
        return float(self.entries(k, k + 1)[0])

    def dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        return self.entries(0, self.size).reshape((self.N,) * self.p)

    def materialize(self, budget: int = DEFAULT_MEMORY_BUDGET) -> "NoiseTensor":
        if self.size > budget:
            raise BudgetError(f"N^p = {self.size} entries exceeds the memory budget {budget}")
        return NoiseTensor(self.N, self.p, self.spec, self.seed, dense=self.dense())

    def slabs(self, slab_entries: int = SLAB_ENTRIES) -> Iterator[tuple[int, int, np.ndarray]]:
        """Yield ``(a, b, W[a:b])`` along the first mode in a fixed order."""
        row = self.N ** (self.p - 1)
        if self._dense is not None:
            yield 0, self.N, self._dense
            return
        rows = max(1, slab_entries // row)
        for a in range(0, self.N, rows):
            b = min(self.N, a + rows)
            yield a, b, self.entries(a * row, b * row).reshape((b - a,) + (self.N,) * (self.p - 1))


def sample_noise(
    N: int,
    p: int,
    spec: NoiseSpec,
    seed,
    backend: str = "auto",
    budget: int = DEFAULT_MEMORY_BUDGET,
) -> NoiseTensor:
    """Noise tensor with i.i.d. entries.

    ``backend`` is ``"materialized"``, ``"streamed"`` or ``"auto"`` (dense when
    ``N^p`` fits the memory budget).
    """
    W = NoiseTensor(N, p, spec, seed)
    if backend == "streamed":
        return W
    if backend == "materialized":
        return W.materialize(budget)
    if backend != "auto":
        raise ValueError(f"unknown backend {backend!r}")
    return W.materialize(budget) if N**p <= budget else W


def _contract(T: np.ndarray, mats: list, free: int | None) -> np.ndarray:
    """Contract every axis of T except ``free`` against column i of ``mats[axis]``.

    The column index is kept diagonal, so the result has shape
    ``(T.shape[free], r)``, or ``(r,)`` when ``free`` is None.
    """
    if free is not None:
        T = np.moveaxis(T, free, 0)
        mats = [mats[free]] + mats[:free] + mats[free + 1 :]
        axes = range(T.ndim - 1, 0, -1)
    else:
        axes = range(T.ndim - 1, -1, -1)
    cur = None
    for ax in axes:
        if cur is None:
            cur = T @ mats[ax]
        else:
            cur = np.einsum("...ki,ki->...i", cur, mats[ax])
    return cur


def _as_frame(X) -> np.ndarray:
    return X.data if isinstance(X, StiefelPoint) else np.asarray(X, dtype=float)


def noise_values(W: NoiseTensor, X) -> np.ndarray:
    """``<W, x_i^{(x) p}>`` for every column of X."""
    Xd = _as_frame(X)
    if Xd.shape[0] != W.N:
        raise DimensionError(f"frame has N={Xd.shape[0]}, tensor has N={W.N}")
    out = np.zeros(Xd.shape[1])
    for a, b, S in W.slabs():
        out += _contract(S, [Xd[a:b]] + [Xd] * (W.p - 1), None)
    return out


def grad_noise(W: NoiseTensor, X, lambdas, mode: GradMode = GradMode.EXACT) -> np.ndarray:
    """Column i is ``lambda_i * grad_{x_i} <W, x_i^{(x) p}>``.

    ``EXACT`` sums the p single-mode contractions. ``FIRST_MODE`` returns p
    times the first-mode contraction, which is the same thing for symmetric W.
    """
    Xd = _as_frame(X)
    if Xd.shape[0] != W.N:
        raise DimensionError(f"frame has N={Xd.shape[0]}, tensor has N={W.N}")
    lam = np.asarray(lambdas, dtype=float)
    p = W.p
    G = np.zeros_like(Xd)
    for a, b, S in W.slabs():
        mats = [Xd[a:b]] + [Xd] * (p - 1)
        if mode is GradMode.FIRST_MODE:
            G[a:b] += p * _contract(S, mats, 0)
            continue
        G[a:b] += _contract(S, mats, 0)
        for q in range(1, p):
            G += _contract(S, mats, q)
    return G * lam


def grad_noise_in_law(
    X,
    lambdas,
    p: int,
    rng: np.random.Generator,
    sigma: float = 1.0,
    mode: GradMode = GradMode.EXACT,
) -> np.ndarray:
    """Draw ``grad_noise(W, X, ...)`` for a fresh Gaussian W without building W.

    Rotating coordinates so the first r basis vectors are the columns of X,
    the gradient only sees the ``r^p`` core of W plus, for each column i and
    mode q, the fiber with all other indices equal to i. Those are disjoint
    sets of i.i.d. entries, so the joint law is reproduced exactly at cost
    ``O(N r p + r^p)``. X must have orthonormal columns.
    """
    Xd = _as_frame(X)
    N, r = Xd.shape
    lam = np.asarray(lambdas, dtype=float)
    core = rng.standard_normal((r,) * p)
    G = np.zeros((N, r))
    nq = p if mode is GradMode.EXACT else 1
    for q in range(nq):
        fib = _core_fiber(core, q, p, r)
        g = rng.standard_normal((N, r))
        g -= Xd @ (Xd.T @ g)
        G += Xd @ fib + g
    if mode is GradMode.FIRST_MODE:
        G *= p
    return sigma * G * lam


def _core_fiber(core: np.ndarray, q: int, p: int, r: int) -> np.ndarray:
    """``F[a, i] = core[i, ..., a (slot q), ..., i]``."""
    F = np.empty((r, r))
    for i in range(r):
        sl = [i] * p
        sl[q] = slice(None)
        F[:, i] = core[tuple(sl)]
    return F


class Observation:
    """Handle for ``Y = W + sqrt(N) sum_i lambda_i v_i^{(x) p}``."""

    def __init__(self, W: NoiseTensor, model: SpikedModel):
        if W.N != model.N or W.p != model.p:
            raise DimensionError(f"noise is (N={W.N}, p={W.p}), model is (N={model.N}, p={model.p})")
        self.W = W
        self.model = model

    def signal_values(self, X) -> np.ndarray:
        Xd = _as_frame(X)
        m = self.model
        if not m.planted:
            return np.zeros(Xd.shape[1])
        C = m.V.data.T @ Xd
        return np.sqrt(m.N) * (m.lam @ C**m.p)

    def values(self, X) -> np.ndarray:
        """``<Y, x_j^{(x) p}>`` for each column."""
        return noise_values(self.W, X) + self.signal_values(X)

    def value(self, a) -> float:
        a = np.asarray(a, dtype=float).reshape(-1, 1)
        return float(self.values(a)[0])

    def euclidean_gradient(self, X, mode: GradMode = GradMode.EXACT) -> np.ndarray:
        return -grad_noise(self.W, X, self.model.lambdas, mode) + grad_population(X, self.model)


class GaussianGradientObservation:
    """Single-use observation that samples the loss gradient in law.

    Equivalent to ``Observation(fresh Gaussian W, model)`` for the purpose of
    one gradient evaluation at an orthonormal frame, without materializing W.
    """

    def __init__(self, model: SpikedModel, rng: np.random.Generator, sigma: float = 1.0):
        self.model = model
        self.rng = rng
        self.sigma = sigma

    def euclidean_gradient(self, X, mode: GradMode = GradMode.EXACT) -> np.ndarray:
        m = self.model
        noise = grad_noise_in_law(X, m.lambdas, m.p, self.rng, self.sigma, mode)
        return -noise + grad_population(X, m)


def loss(X: StiefelPoint, Y: Observation, model: SpikedModel) -> float:
    """``-sum_i lambda_i <Y, x_i^{(x) p}>`` at a unit-scale frame."""
    if X.scale is not Scale.UNIT:
        raise ConventionError("loss is defined on the unit Stiefel manifold")
    return float(-model.lam @ Y.values(X))


def population_loss(X: StiefelPoint, model: SpikedModel) -> float:
    """Noise-averaged loss ``-sqrt(N) sum_ij lambda_i lambda_j m_ij^p``."""
    if not model.planted:
        return 0.0
    M = correlation_matrix(model.V, X.rescaled(Scale.UNIT)).data
    lam = model.lam
    return float(-np.sqrt(model.N) * lam @ M**model.p @ lam)


def grad_population(X, model: SpikedModel) -> np.ndarray:
    """Euclidean gradient of the population loss at a unit-scale frame.

    Column j is ``-p sqrt(N) lambda_j sum_i lambda_i m_ij^{p-1} v_i``.
    """
    Xd = _as_frame(X)
    if not model.planted:
        return np.zeros_like(Xd)
    lam = model.lam
    M = model.V.data.T @ Xd
    p = model.p
    coef = (lam[:, None] * M ** (p - 1)) * lam[None, :]
    return -p * np.sqrt(model.N) * model.V.data @ coef


def _require_sqrtN(X: StiefelPoint):
    if not isinstance(X, StiefelPoint) or X.scale is not Scale.SQRTN:
        raise ConventionError("expected a frame on the sqrt(N)-normalized Stiefel manifold")


def hamiltonian_H0(W: NoiseTensor, X: StiefelPoint, lambdas) -> float:
    """``N^{-(p-1)/2} sum_i lambda_i <W, x_i^{(x) p}>`` on the sqrt(N) manifold."""
    _require_sqrtN(X)
    lam = np.asarray(lambdas, dtype=float)
    return float(X.N ** (-(W.p - 1) / 2) * lam @ noise_values(W, X))


def grad_H0(W: NoiseTensor, X: StiefelPoint, lambdas) -> np.ndarray:
    """Euclidean gradient of H0."""
    _require_sqrtN(X)
    return X.N ** (-(W.p - 1) / 2) * grad_noise(W, X, lambdas)


def empirical_risk(X: StiefelPoint, W: NoiseTensor, model: SpikedModel, M: float) -> float:
    """``H0 / sqrt(M) - N sum_ij lambda_i lambda_j m_ij^p`` with ``m_ij = <v_i, x_j> / N``."""
    _require_sqrtN(X)
    val = hamiltonian_H0(W, X, model.lambdas) / np.sqrt(M)
    if model.planted:
        Mc = correlation_matrix(model.V_as(Scale.SQRTN), X).data
        val -= model.N * model.lam @ Mc**model.p @ model.lam
    return float(val)


def empirical_risk_egrad(X: StiefelPoint, W: NoiseTensor, model: SpikedModel, M: float) -> np.ndarray:
    """Euclidean gradient of the empirical risk."""
    _require_sqrtN(X)
    g = grad_H0(W, X, model.lambdas) / np.sqrt(M)
    if model.planted:
        lam = model.lam
        Mc = model.V.data.T @ X.data / np.sqrt(model.N)
        coef = (lam[:, None] * Mc ** (model.p - 1)) * lam[None, :]
        g = g - model.p * np.sqrt(model.N) * model.V.data @ coef
    return g


def empirical_risk_force(X: StiefelPoint, W: NoiseTensor, model: SpikedModel, M: float) -> TangentVector:
    """``-grad_M R(X)``, the gradient-flow velocity on the sqrt(N) manifold."""
    g = riemannian_gradient(X, empirical_risk_egrad(X, W, model, M))
    return TangentVector(-g.data, X)
