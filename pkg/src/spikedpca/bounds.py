"""Comparison inequalities for discrete and continuous growth.

The envelopes bracket sequences obeying

    a1 + b1 * sum_{s<t} g(u_s) <= u_t <= a2 + b2 * sum_{s<t} g(u_s)

with ``g(u) = u`` (linear growth), ``g(u) = u^{p-1}`` (polynomial growth,
p >= 3) or ``g(u) = u (1 - u)`` (logistic growth). They are used as oracles
for the correlation dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import laplacian_corr
from .errors import BlowUpError, ConventionError
from .manifold import Scale, StiefelPoint, correlation_matrix, polar_retract, tangent_basis


@dataclass(frozen=True)
class BoundParams:
    """Initial-value band ``[a1, a2]`` and drift band ``[b1, b2]``.

    ``c0`` is an optional contraction parameter in (0, 1) carried along for
    callers that inflate and deflate the bands by ``1 +- c0``.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    p: int = 2
    c0: float | None = None

    def __post_init__(self):
        if not (0 < self.a1 <= self.a2):
            raise ValueError(f"need 0 < a1 <= a2, got {self.a1}, {self.a2}")
        if not (0 <= self.b1 <= self.b2):
            raise ValueError(f"need 0 <= b1 <= b2, got {self.b1}, {self.b2}")
        if self.p < 2:
            raise ValueError(f"p must be at least 2, got {self.p}")
        if self.c0 is not None and not 0 < self.c0 < 1:
            raise ValueError(f"c0 must lie in (0, 1), got {self.c0}")


def _check_t(t) -> int:
    if int(t) != t or t < 0:
        raise ValueError(f"discrete bounds take a non-negative integer t, got {t}")
    return int(t)


def discrete_gronwall_bounds(params: BoundParams, t: int) -> tuple[float, float]:
    """``(a1 (1 + b1)^t, a2 (1 + b2)^t)`` for linear growth."""
    t = _check_t(t)
    return params.a1 * (1 + params.b1) ** t, params.a2 * (1 + params.b2) ** t


def bihari_blowup_step(a: float, b: float, p: int, literal: bool = False) -> float:
    """Real time at which the polynomial envelope ``a (1 - k b a^{p-2} t)^{-1/(p-2)}`` diverges.

    ``k = p - 2`` unless ``literal`` (then ``k = 1``).
    """
    k = 1.0 if literal else float(p - 2)
    rate = k * b * a ** (p - 2)
    return math.inf if rate == 0 else 1.0 / rate


def _bihari(a: float, rate: float, p: int, t: int) -> float:
    base = 1.0 - rate * a ** (p - 2) * t
    return a * base ** (-1.0 / (p - 2))


def discrete_bihari_bounds(
    params: BoundParams,
    t: int,
    u_prev: float | None = None,
    lower: str = "general",
    literal: bool = False,
) -> tuple[float, float]:
    """Envelope for polynomial growth ``g(u) = u^{p-1}``, p >= 3.

    Parameters
    ----------
    params : BoundParams
        Bands with ``params.p >= 3``.
    t : int
        Step index.
    u_prev : float, optional
        Previous iterate ``u_{t-1}``, needed by the general lower bound for
        ``t >= 1``.
    lower : {"general", "simplified"}
        ``"general"`` damps the lower rate by ``(1 + b1 u_{t-1}^{p-2})^{p-1}``;
        ``"simplified"`` drops that factor.
    literal : bool
        Use rate ``b`` instead of ``(p - 2) b`` in both envelopes. The two
        agree at p = 3; for p >= 4 the literal upper envelope is too tight
        and the literal simplified lower envelope is too loose.

    Returns
    -------
    (lower, upper) : tuple of float

    Raises
    ------
    BlowUpError
        If ``t`` is at or past the divergence time of the upper envelope.
    """
    p = params.p
    if p < 3:
        raise ValueError("polynomial growth bounds need p >= 3")
    t = _check_t(t)
    if t == 0:
        return params.a1, params.a2
    k = 1.0 if literal else float(p - 2)
    t_star = bihari_blowup_step(params.a2, params.b2, p, literal)
    if t >= t_star:
        raise BlowUpError(f"upper envelope diverges at t* = {t_star}", t_star)
    up = _bihari(params.a2, k * params.b2, p, t)
    if lower == "simplified":
        rate = k * params.b1
    elif lower == "general":
        if u_prev is None:
            raise ValueError("the general lower bound needs u_prev for t >= 1")
        rate = k * params.b1 / (1 + params.b1 * abs(u_prev) ** (p - 2)) ** (p - 1)
    else:
        raise ValueError(f"unknown lower bound form {lower!r}")
    lo = _bihari(params.a1, rate, p, t) if rate * params.a1 ** (p - 2) * t < 1 else math.inf
    return lo, up


def _logistic(a: float, rate: float, t: float) -> float:
    odds = a / (1 - a) * math.exp(rate * t)
    return odds / (1 + odds)


def discrete_logistic_bounds(params: BoundParams, t: int) -> tuple[float, float]:
    """Envelope for logistic growth ``g(u) = u (1 - u)`` on [0, 1].

    Lower: logistic curve from ``a1`` with rate ``b1 / (1 + b1)``.
    Upper: logistic curve from ``a2`` with rate ``b2``. Valid while the
    sequence stays at or below 1/2.
    """
    if not params.a2 < 0.5:
        raise ValueError("logistic bounds need a1 <= a2 < 1/2")
    t = _check_t(t)
    if t == 0:
        return params.a1, params.a2
    return _logistic(params.a1, params.b1 / (1 + params.b1), t), _logistic(params.a2, params.b2, t)


def logistic_validity_ceiling(params: BoundParams) -> int | None:
    """First integer t with upper envelope above 1/2 (None if it never gets there)."""
    if params.b2 == 0:
        return None
    # odds(t) > 1  <=>  t > log((1 - a2) / a2) / b2
    t0 = math.log((1 - params.a2) / params.a2) / params.b2
    t = math.floor(t0) + 1
    return t


def continuous_bihari(a: float, c: float, gamma: float, t: float) -> float:
    """Solution of ``f' = c f^gamma`` from ``f(0) = a``.

    For ``gamma > 1`` this is ``a (1 - (gamma - 1) c a^{gamma-1} t)^{-1/(gamma-1)}``;
    ``gamma = 1`` gives ``a exp(c t)``. Any ``f >= a + int c f^gamma`` lies above
    it and any ``f <= a + int c f^gamma`` below it.
    """
    if a <= 0 or c <= 0:
        raise ValueError("need a, c > 0")
    if gamma < 1:
        raise ValueError("need gamma >= 1")
    if gamma == 1:
        return a * math.exp(c * t)
    t_star = blowup_time(a, c, gamma)
    if t >= t_star:
        raise BlowUpError(f"solution diverges at t* = {t_star}", t_star)
    return a * (1 - (gamma - 1) * c * a ** (gamma - 1) * t) ** (-1.0 / (gamma - 1))


def blowup_time(a: float, c: float, gamma: float) -> float:
    """``((gamma - 1) c a^{gamma-1})^{-1}``, infinite for ``gamma = 1``."""
    if a <= 0 or c <= 0:
        raise ValueError("need a, c > 0")
    if gamma < 1:
        raise ValueError("need gamma >= 1")
    if gamma == 1:
        return math.inf
    return 1.0 / ((gamma - 1) * c * a ** (gamma - 1))


@dataclass
class RecursionCheck:
    ok: bool
    first_violation: int | None = None
    side: str | None = None
    checked: int = 0
    note: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_recursion_bounds(
    sequence,
    a: tuple[float, float],
    b: tuple[float, float],
    p: int,
    kind: str,
    lower: str = "general",
    literal: bool = False,
    rtol: float = 0.0,
) -> RecursionCheck:
    """Check a sequence against the envelope of its growth law.

    ``kind`` is ``"gronwall"``, ``"bihari"`` or ``"logistic"``. ``a`` and ``b``
    are the ``(low, high)`` bands. Containment is exact unless ``rtol`` widens
    each envelope by that relative amount (floating-point slack for sequences
    that meet a bound with equality).
    Checking stops at the blow-up step of the polynomial envelope and, for
    the logistic law, after the first element that exceeds 1/2.
    """
    u = np.asarray(sequence, dtype=float)
    params = BoundParams(a[0], a[1], b[0], b[1], p)
    checked = 0
    for t, ut in enumerate(u):
        if kind == "gronwall":
            lo, hi = discrete_gronwall_bounds(params, t)
        elif kind == "bihari":
            try:
                lo, hi = discrete_bihari_bounds(params, t, u[t - 1] if t else None, lower, literal)
            except BlowUpError:
                return RecursionCheck(True, checked=checked, note=f"stopped at blow-up step {t}")
        elif kind == "logistic":
            if ut > 0.5:
                return RecursionCheck(True, checked=checked, note=f"stopped at step {t} above 1/2")
            lo, hi = discrete_logistic_bounds(params, t)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        lo, hi = lo * (1 - rtol), hi * (1 + rtol)
        if ut < lo:
            return RecursionCheck(False, t, "lower", checked)
        if ut > hi:
            return RecursionCheck(False, t, "upper", checked)
        checked += 1
    return RecursionCheck(True, checked=checked)


def growth_law(kind: str, p: int = 2):
    """The increment function ``g`` of each growth law."""
    if kind == "gronwall":
        return lambda x: x
    if kind == "bihari":
        return lambda x: x ** (p - 1)
    if kind == "logistic":
        return lambda x: x * (1 - x)
    raise ValueError(f"unknown kind {kind!r}")


def simulate_band_recursion(a, b, p: int, kind: str, steps: int, rng=None, cap: float = 1e12) -> np.ndarray:
    """Sequence obeying the two-sided recursion inequality.

    With ``rng=None`` and equal band ends this is the equality recursion; with
    an ``rng`` each ``u_t`` is drawn uniformly inside
    ``[a1 + b1 S_t, a2 + b2 S_t]``, ``S_t = sum_{s<t} g(u_s)``. Stops after the
    first element above ``cap``.
    """
    g = growth_law(kind, p)
    a1, a2 = a
    b1, b2 = b
    u = [a1 if rng is None else rng.uniform(a1, a2)]
    S = 0.0
    for _ in range(steps):
        S += g(u[-1])
        lo, hi = a1 + b1 * S, a2 + b2 * S
        u.append(lo if rng is None else rng.uniform(lo, hi))
        if u[-1] > cap:
            break
    return np.array(u)


def laplacian_mij(X: StiefelPoint, i: int, j: int, V: StiefelPoint, metric: str = "canonical") -> float:
    """Laplace-Beltrami operator of the linear function ``m_ij`` at X.

    Canonical metric: ``-((N - 1) / N) m_ij``. The Euclidean (embedded)
    metric gives ``-((N - (r + 1)/2) / N) m_ij``.
    """
    if X.scale is not Scale.SQRTN:
        raise ConventionError("the Laplacian is stated on the sqrt(N) manifold")
    return float(laplacian_corr(X, V, metric=metric)[i, j])


def fd_laplacian(f, X: StiefelPoint, metric: str = "canonical", h: float = 1e-3) -> float:
    """Finite-difference Laplacian ``sum_k d^2/ds^2 f(R_X(s E_k))`` over an orthonormal tangent basis.

    Central second differences along polar-retraction curves. Exact up to
    O(h^2) for functions whose Hessian is read off second-order curves.
    """
    f0 = f(X)
    total = 0.0
    for E in tangent_basis(X, metric):
        fp = f(polar_retract(X, h * E))
        fm = f(polar_retract(X, -h * E))
        total += (fp - 2 * f0 + fm) / h**2
    return total


def fd_laplacian_mij(X: StiefelPoint, i: int, j: int, V: StiefelPoint, metric: str = "canonical", h: float = 1e-3) -> float:
    Vs = V.rescaled(X.scale)
    return fd_laplacian(lambda Y: correlation_matrix(Vs, Y).data[i, j], X, metric, h)
