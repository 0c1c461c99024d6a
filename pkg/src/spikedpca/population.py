"""Deterministic low-dimensional dynamics of the correlations.

The full population system for the correlation matrix is

    dm_ij/dt = p l_i l_j m_ij^{p-1}
               - (p/2) sum_{k,l} l_k m_il m_kj m_kl (l_j m_kj^{p-2} + l_l m_kl^{p-2}),

which is exactly the drift of ``m_ij`` under noise-free gradient flow on the
sqrt(N) manifold. Dropping the correction sum leaves the "simple" system
``dm_ij/dt = p l_i l_j m_ij^{p-1}`` that has closed-form solutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import BlowUpError, OrderingError
from .trajectory import Trajectory

BLOWUP_TOL = 1e-6


@dataclass(frozen=True)
class PopulationModel:
    """The only model data the population systems need."""

    lambdas: tuple
    p: int

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")

    @property
    def r(self) -> int:
        return len(self.lambdas)


@dataclass(frozen=True)
class EscapeTimePrediction:
    t_lower: float
    t_upper: float
    regime: str


def _lam_p(model) -> tuple[np.ndarray, int]:
    return np.asarray(model.lambdas, dtype=float), int(model.p)


def corr_rhs(M, model) -> np.ndarray:
    """Right-hand side of the full population system for M."""
    lam, p = _lam_p(model)
    M = np.asarray(M, dtype=float)
    Mp1 = M ** (p - 1)
    drift = p * np.outer(lam, lam) * Mp1
    # sum_k (M M^T)_ik l_k m_kj^{p-1}, weighted by l_j
    A = (M @ M.T) @ (lam[:, None] * Mp1) * lam[None, :]
    # sum_k l_k m_kj (sum_l m_il l_l m_kl^{p-1})
    B = (M @ (lam[:, None] * Mp1.T)) @ (lam[:, None] * M)
    return drift - 0.5 * p * (A + B)


def drift_rhs(M, model) -> np.ndarray:
    """Simple system ``p l_i l_j m_ij^{p-1}`` without the correction terms."""
    lam, p = _lam_p(model)
    return p * np.outer(lam, lam) * np.asarray(M, dtype=float) ** (p - 1)


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _time_grid(T: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < 0:
        raise ValueError(f"horizon must be non-negative, got {T}")
    n = int(np.floor(T / dt + 1e-9))
    grid = dt * np.arange(n + 1)
    if T - grid[-1] > 1e-12 * max(1.0, T):
        grid = np.append(grid, T)
    return grid


def integrate_corr(
    M0,
    model,
    T: float,
    dt: float,
    rhs: str = "full",
    record_every: int = 1,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Integrate the correlation system with fixed-step RK4.

    ``rhs`` selects the full system or the simple drift-only one. Integration
    halts (with a ``blowup`` event and ``meta["truncated"]``) as soon as an
    entry leaves ``[-1 - 1e-6, 1 + 1e-6]``; entries are never clipped.
    ``stop(t, M)`` may end the run early.
    """
    f0 = {"full": corr_rhs, "drift": drift_rhs}[rhs]

    def f(M):
        return f0(M, model)

    M = np.array(M0, dtype=float)
    grid = _time_grid(T, dt)
    traj = Trajectory(meta={"rhs": rhs, "dt": dt, "T": T, "method": "rk4", "truncated": False})
    traj.record(grid[0], M)
    last = len(grid) - 1
    for k in range(1, len(grid)):
        M_new = rk4_step(f, M, grid[k] - grid[k - 1])
        if not np.all(np.isfinite(M_new)) or np.max(np.abs(M_new)) > 1 + BLOWUP_TOL:
            traj.events.append({"kind": "blowup", "t": float(grid[k]), "max_abs": float(np.max(np.abs(M_new)))})
            traj.meta["truncated"] = True
            if traj.times[-1] < grid[k - 1]:
                traj.record(grid[k - 1], M)
            break
        M = M_new
        if k % record_every == 0 or k == last:
            traj.record(grid[k], M)
        if stop is not None and stop(grid[k], M):
            if traj.times[-1] < grid[k]:
                traj.record(grid[k], M)
            traj.events.append({"kind": "stop", "t": float(grid[k])})
            break
    return traj


def gram_rhs(G, lam: float) -> np.ndarray:
    """Isotropic Riccati system ``4 l^2 G (I - G)``, symmetrized."""
    G = np.asarray(G, dtype=float)
    R = 4.0 * lam**2 * (G - G @ G)
    return 0.5 * (R + R.T)


def integrate_gram(G0, lam: float, T: float, dt: float, record_every: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the Riccati system; returns ``(times, G(t))``."""
    G = np.array(G0, dtype=float)
    grid = _time_grid(T, dt)
    times, path = [grid[0]], [G.copy()]
    last = len(grid) - 1
    for k in range(1, len(grid)):
        G = rk4_step(lambda A: gram_rhs(A, lam), G, grid[k] - grid[k - 1])
        if k % record_every == 0 or k == last:
            times.append(grid[k])
            path.append(G.copy())
    return np.array(times), np.array(path)


def logistic_eigenvalue(theta0, lam: float, t):
    """Scalar solution of ``theta' = 4 l^2 theta (1 - theta)``."""
    e = np.exp(4.0 * lam**2 * np.asarray(t, dtype=float))
    return theta0 * e / (1.0 + theta0 * (e - 1.0))


def eigen_track(grams) -> np.ndarray:
    """Continuous eigenvalue tracks along a path of symmetric matrices.

    Consecutive eigenpairs are matched by eigenvector overlap (an optimal
    assignment on ``|<u_prev, u_cur>|``). When two eigenvalues are closer
    than 1e-12 the eigenvectors are ill-defined and the sorted order is used.
    Returns an array of shape ``(len(grams), r)``.
    """
    grams = np.asarray(grams, dtype=float)
    out = np.empty(grams.shape[:2])
    w, U = np.linalg.eigh(grams[0])
    order = np.argsort(-w, kind="stable")
    out[0], prev_U = w[order], U[:, order]
    for k in range(1, len(grams)):
        w, U = np.linalg.eigh(grams[k])
        if np.min(np.diff(w), initial=np.inf) < 1e-12:
            order = np.argsort(-w, kind="stable")
        else:
            _, order = linear_sum_assignment(-np.abs(prev_U.T @ U))
        out[k], prev_U = w[order], U[:, order]
    return out


def blowup_time_single(m0: float, drift_coeff: float, p: int) -> float:
    """Blow-up time of ``m' = c p m^{p-1}`` (infinite for p = 2)."""
    if p == 2:
        return np.inf
    return 1.0 / (drift_coeff * p * (p - 2) * m0 ** (p - 2))


def closed_form_single(m0: float, drift_coeff: float, p: int, t):
    """Solution of ``m' = c p m^{p-1}`` with ``c = l_i l_j``.

    ``m0 (1 - c p (p-2) m0^{p-2} t)^{-1/(p-2)}`` for p >= 3 and
    ``m0 exp(2 c t)`` for p = 2.
    """
    if not m0 > 0:
        raise ValueError(f"m0 must be positive, got {m0}")
    t = np.asarray(t, dtype=float)
    c = drift_coeff
    if p == 2:
        return m0 * np.exp(2.0 * c * t)
    t_star = blowup_time_single(m0, c, p)
    if np.any(t >= t_star):
        raise BlowUpError(f"t reaches the blow-up time t* = {t_star:.6g}", t_star)
    return m0 * (1.0 - c * p * (p - 2) * m0 ** (p - 2) * t) ** (-1.0 / (p - 2))


def escape_time_bounds(
    regime: str,
    p: int,
    c0: float,
    delta: float,
    gamma: float,
    N: float,
    eps: float,
    lam_prod: float = 1.0,
    literal: bool = False,
) -> EscapeTimePrediction:
    """Bracket the first step at which a correlation starting at ``gamma / sqrt(N)`` reaches ``eps``.

    ``regime`` is ``"P3plus"`` or ``"P2"``. For p >= 3 the growth rate carries
    the factor ``(p - 2)`` of the continuous comparison ODE; ``literal=True``
    drops it (the two agree at p = 3).
    """
    if not 0 <= c0 < 1:
        raise ValueError(f"c0 must lie in [0, 1), got {c0}")
    if min(delta, gamma, N, eps, lam_prod) <= 0:
        raise ValueError("parameters must be positive")
    sN = np.sqrt(N)
    if eps * sN <= (1 + c0) * gamma:
        raise OrderingError("target eps*sqrt(N) must exceed the (inflated) starting level gamma")
    if regime == "P2":
        if p != 2:
            raise ValueError("regime P2 requires p = 2")
        t_u = np.log(eps * sN / ((1 - c0) * gamma)) / np.log1p(2 * delta * (1 - c0) * lam_prod / sN)
        t_l = np.log(eps * sN / ((1 + c0) * gamma)) / np.log1p(2 * delta * (1 + c0) * lam_prod / sN)
        return EscapeTimePrediction(float(t_l), float(t_u), regime)
    if regime != "P3plus":
        raise ValueError(f"unknown regime {regime!r}")
    if p < 3:
        raise ValueError("regime P3plus requires p >= 3")
    k = 1.0 if literal else float(p - 2)

    def T(sign):
        f = 1 + sign * c0
        num = 1 - (f * gamma / (eps * sN)) ** (p - 2)
        return num / (k * delta * f ** (p - 1) * p * lam_prod * gamma ** (p - 2)) * N ** ((p - 1) / 2)

    return EscapeTimePrediction(float(T(+1)), float(T(-1)), regime)


# Population presets reproducing the qualitative content of the figures of the
# population dynamics: initial matrices use 1e-2 magnitudes standing in for
# Theta(1/sqrt(N)).
def _preset_inits(r: int, seed: int, scale: float = 1e-2) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return scale * (0.5 + rng.random((r, r)))


PRESETS = {
    "fig-p3-r2": dict(p=3, lambdas=(3.0, 1.0), M0=np.full((2, 2), 1e-2), T=150.0, dt=1e-2),
    "fig-p3-r2-equal": dict(p=3, lambdas=(1.0, 1.0), M0=np.array([[1.2e-2, 0.9e-2], [1.0e-2, 0.7e-2]]), T=400.0, dt=1e-2),
    "fig-p3-r4-equal": dict(p=3, lambdas=(1.0,) * 4, M0=_preset_inits(4, 3), T=600.0, dt=1e-2),
    "fig-p2-r2": dict(p=2, lambdas=(3.0, 1.0), M0=np.full((2, 2), 1e-2), T=40.0, dt=1e-2),
    "fig-p2-r2-equal": dict(p=2, lambdas=(1.0, 1.0), M0=np.array([[1.2e-2, 0.9e-2], [1.0e-2, 0.7e-2]]), T=40.0, dt=1e-2),
    "fig-p2-isotropic": dict(p=2, lambdas=(1.0,) * 4, M0=_preset_inits(4, 5), T=40.0, dt=1e-2),
}


def preset(name: str) -> dict:
    """Copy of a named population preset."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    cfg = dict(PRESETS[name])
    cfg["M0"] = np.array(cfg["M0"], dtype=float)
    return cfg


def run_preset(name: str, record_every: int = 10) -> Trajectory:
    cfg = preset(name)
    model = PopulationModel(cfg["lambdas"], cfg["p"])
    traj = integrate_corr(cfg["M0"], model, cfg["T"], cfg["dt"], record_every=record_every)
    traj.meta["preset"] = name
    return traj


def simulate_recursion(a: float, b: float, p: int, steps: int, cap: float = np.inf) -> np.ndarray:
    """``u_t = a + b sum_{s<t} u_s^{p-1}`` for t up to ``steps`` (stops once above ``cap``)."""
    u = [a]
    acc = 0.0
    for _ in range(steps):
        acc += u[-1] ** (p - 1)
        nxt = a + b * acc
        u.append(nxt)
        if nxt > cap:
            break
    return np.array(u)


def recursion_hitting_time(a: float, b: float, p: int, level: float, max_steps: int = 10**7) -> int:
    """First t with ``u_t >= level`` for the equality recursion."""
    u, acc, t = a, 0.0, 0
    while u < level:
        if t >= max_steps:
            raise RuntimeError("recursion did not reach the level")
        acc += u ** (p - 1)
        u = a + b * acc
        t += 1
    return t


__all__: Sequence[str] = [
    "PopulationModel",
    "EscapeTimePrediction",
    "corr_rhs",
    "drift_rhs",
    "integrate_corr",
    "gram_rhs",
    "integrate_gram",
    "logistic_eigenvalue",
    "eigen_track",
    "closed_form_single",
    "blowup_time_single",
    "escape_time_bounds",
    "PRESETS",
    "preset",
    "run_preset",
    "simulate_recursion",
    "recursion_hitting_time",
]
