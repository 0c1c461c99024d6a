"""Dynamics engines: online SGD, gradient flow and Langevin dynamics.

Online SGD runs on the unit Stiefel manifold with one fresh noise tensor per
step. Gradient flow and Langevin dynamics run on the sqrt(N)-normalized
manifold with a single noise tensor weighted by ``1/sqrt(M)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConventionError, NumericalError
from .manifold import (
    Scale,
    StiefelPoint,
    TangentVector,
    correlation_matrix,
    inv_sqrt_psd,
    polar_retract,
    project_tangent,
    riemannian_gradient,
)
from .model import (
    GaussianGradientObservation,
    GradMode,
    NoiseDist,
    NoiseSpec,
    NoiseTensor,
    Observation,
    SpikedModel,
    _philox_key,
    empirical_risk_force,
    grad_H0,
    sample_noise,
)
from .population import corr_rhs
from .trajectory import Trajectory


class Regime(enum.Enum):
    TENSOR_P3PLUS = "TensorP3plus"
    MATRIX_SEPARATED = "MatrixSeparated"
    MATRIX_ISOTROPIC_MAX = "MatrixIsotropicMax"
    MATRIX_ISOTROPIC_MIN = "MatrixIsotropicMin"


def step_size_schedule(
    p: int,
    N: int,
    regime: Regime | str,
    C_delta: float = 1.0,
    d0: float | None = None,
    eps: float = 0.5,
    gamma2: float = 1.0,
) -> float:
    """Step size prescribed for each recovery regime.

    ================== =========================================
    TensorP3plus        C d0 N^{-(p-3)/2}            (p >= 3)
    MatrixSeparated     C d0 sqrt(N) / log(2 eps sqrt(N) / gamma2)
    MatrixIsotropicMax  C d0 sqrt(N) / log(log N)
    MatrixIsotropicMin  C d0 sqrt(N) / log(N)^2
    ================== =========================================

    ``d0`` defaults to ``1 / log N``.
    """
    regime = Regime(regime)
    if N < 3:
        raise ValueError(f"schedules need N >= 3, got {N}")
    if d0 is None:
        d0 = 1.0 / math.log(N)
    base = C_delta * d0
    if regime is Regime.TENSOR_P3PLUS:
        if p < 3:
            raise ValueError("TensorP3plus requires p >= 3")
        return base * N ** (-(p - 3) / 2)
    if p != 2:
        raise ValueError(f"{regime.value} requires p = 2")
    sN = math.sqrt(N)
    if regime is Regime.MATRIX_SEPARATED:
        L = math.log(2 * eps * sN / gamma2)
        if L <= 0:
            raise ValueError("need 2 eps sqrt(N) > gamma2")
        return base * sN / L
    if regime is Regime.MATRIX_ISOTROPIC_MAX:
        return base * sN / math.log(math.log(N))
    return base * sN / math.log(N) ** 2


@dataclass
class SgdConfig:
    """Online SGD settings.

    ``noise_backend="streamed"`` draws a full keyed noise tensor per step;
    ``"gaussian_law"`` samples the gradient of a fresh Gaussian tensor
    directly (same law, O(N r p) per step); ``"none"`` drops the noise
    tensor, leaving the gradient of the spike part alone.
    """

    delta: float
    steps: int
    grad_mode: GradMode = GradMode.EXACT
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    record_every: int | None = None
    noise_backend: str = "streamed"

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        if self.noise_backend not in ("streamed", "gaussian_law", "none"):
            raise ValueError(f"unknown noise backend {self.noise_backend!r}")
        if self.noise_backend == "gaussian_law" and self.noise.dist is not NoiseDist.GAUSSIAN:
            raise ValueError("the gaussian_law backend needs Gaussian noise")

    @property
    def stride(self) -> int:
        if self.record_every:
            return int(self.record_every)
        return max(1, self.steps // 2000)


@dataclass
class FlowConfig:
    beta: float = math.inf
    M: float = 1.0
    dt: float = 1e-3
    T: float = 1.0
    rescale_time: bool = False

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError(f"dt must be non-negative, got {self.dt}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.M >= 1:
            raise ValueError(f"M must be >= 1, got {self.M}")


def sgd_step(
    X: StiefelPoint,
    Y,
    delta: float,
    model: SpikedModel,
    mode: GradMode = GradMode.EXACT,
    diagnostics: dict | None = None,
) -> StiefelPoint:
    """One step ``X' = R_X(-(delta/N) grad_St L(X; Y))`` with the polar retraction.

    ``diagnostics`` (if given) receives ``neumann_violation`` (whether
    ``delta^2 ||G||_F / N^2 >= 1`` with ``G`` the Gram matrix of the
    Riemannian gradient) and ``route_deviation``, the largest difference
    between the explicit ``(X - (delta/N) grad) P_t`` form and the retraction.
    """
    if X.scale is not Scale.UNIT:
        raise ConventionError("online SGD runs on the unit Stiefel manifold")
    if delta == 0:
        if diagnostics is not None:
            diagnostics.update(neumann_violation=False, route_deviation=0.0)
        return X
    g = Y.euclidean_gradient(X, mode)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient entries")
    rg = riemannian_gradient(X, g).data
    N = X.N
    U = -(delta / N) * rg
    X_new = polar_retract(X, U)
    if diagnostics is not None:
        gram = rg.T @ rg
        diagnostics["neumann_violation"] = bool(delta**2 * np.linalg.norm(gram) / N**2 >= 1)
        P = inv_sqrt_psd(np.eye(X.r) + (delta / N) ** 2 * gram)
        explicit = (X.data - (delta / N) * rg) @ P
        diagnostics["route_deviation"] = float(np.max(np.abs(explicit - X_new.data)))
    return X_new


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(0, 2**63))
    return int(seed)


def sgd_run(
    model: SpikedModel,
    cfg: SgdConfig,
    X0: StiefelPoint,
    seed,
    check_route: bool = False,
    stop: Callable[[int, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Run online SGD for ``cfg.steps`` steps; the time axis counts steps (= samples).

    The noise tensor of step t is keyed by ``(seed, t)``, so runs are
    reproducible bit for bit. ``stop(t, M)`` may end the run early.
    """
    if X0.scale is not Scale.UNIT:
        raise ConventionError("online SGD starts from a unit-scale frame")
    seed = _seed_int(seed)
    stride = cfg.stride
    traj = Trajectory(meta={"dynamics": "sgd", "delta": cfg.delta, "steps": cfg.steps, "record_every": stride,
                            "noise_backend": cfg.noise_backend})
    X = X0
    traj.record(0, correlation_matrix(model.V, X).data)
    law_rng = None
    silent = NoiseTensor.zeros(model.N, model.p) if cfg.noise_backend == "none" else None
    if cfg.noise_backend == "gaussian_law":
        law_rng = np.random.Generator(np.random.Philox(key=_philox_key([seed, 1])))
    violations, route_dev = 0, 0.0
    diag: dict = {}
    last_t = 0
    for t in range(1, cfg.steps + 1):
        if silent is not None:
            Y = Observation(silent, model)
        elif law_rng is not None:
            Y = GaussianGradientObservation(model, law_rng, cfg.noise.sigma)
        else:
            W = sample_noise(model.N, model.p, cfg.noise, [seed, t], backend="streamed")
            Y = Observation(W, model)
        X = sgd_step(X, Y, cfg.delta, model, cfg.grad_mode, diag)
        violations += diag["neumann_violation"]
        if check_route:
            route_dev = max(route_dev, diag["route_deviation"])
        last_t = t
        M = None
        if t % stride == 0 or t == cfg.steps:
            M = correlation_matrix(model.V, X).data
            traj.record(t, M)
        if stop is not None:
            if M is None:
                M = correlation_matrix(model.V, X).data
            if stop(t, M):
                if traj.times[-1] < t:
                    traj.record(t, M)
                traj.events.append({"kind": "stop", "t": t})
                break
    traj.final_X = X
    traj.meta.update(neumann_violations=int(violations), steps_run=last_t)
    if check_route:
        traj.meta["max_route_deviation"] = route_dev
    return traj


def flow_step(X: StiefelPoint, force, dt: float) -> StiefelPoint:
    """Explicit Euler step along ``force`` followed by the polar retraction."""
    F = getattr(force, "data", force)
    if dt == 0:
        return X
    return polar_retract(X, dt * np.asarray(F))


def _flow_force(X: StiefelPoint, W: NoiseTensor, model: SpikedModel, cfg: FlowConfig) -> np.ndarray:
    F = empirical_risk_force(X, W, model, cfg.M).data
    return F * math.sqrt(cfg.M) if cfg.rescale_time else F


def gradient_flow_run(
    model: SpikedModel,
    W: NoiseTensor,
    cfg: FlowConfig,
    X0: StiefelPoint,
    record_every: int = 1,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Gradient flow ``dX/dt = -grad R(X)`` on the sqrt(N) manifold.

    With ``rescale_time`` the drift is that of ``H = sqrt(M) R``.
    """
    if X0.scale is not Scale.SQRTN:
        raise ConventionError("gradient flow runs on the sqrt(N)-normalized manifold")
    Vs = model.V_as(Scale.SQRTN)
    traj = Trajectory(meta={"dynamics": "gradient_flow", "dt": cfg.dt, "T": cfg.T, "M": cfg.M,
                            "rescale_time": cfg.rescale_time, "record_every": record_every})
    X = X0
    traj.record(0.0, correlation_matrix(Vs, X).data)
    n = 0 if cfg.dt == 0 else int(round(cfg.T / cfg.dt))
    for k in range(1, n + 1):
        X = flow_step(X, _flow_force(X, W, model, cfg), cfg.dt)
        M = None
        if k % record_every == 0 or k == n:
            M = correlation_matrix(Vs, X).data
            traj.record(k * cfg.dt, M)
        if stop is not None:
            M = correlation_matrix(Vs, X).data if M is None else M
            if stop(k * cfg.dt, M):
                if traj.times[-1] < k * cfg.dt:
                    traj.record(k * cfg.dt, M)
                traj.events.append({"kind": "stop", "t": k * cfg.dt})
                break
    traj.final_X = X
    return traj


def langevin_run(
    model: SpikedModel,
    W: NoiseTensor,
    cfg: FlowConfig,
    X0: StiefelPoint,
    seed,
    record_every: int = 1,
) -> Trajectory:
    """Langevin dynamics ``dX = sqrt(2) dB - beta grad H dt`` with ``H = sqrt(M) R``.

    Discretized as ``X' = R_X(-beta grad H h + sqrt(2h) Pi_X xi)`` with xi a
    standard Gaussian matrix. ``beta = inf`` runs gradient flow of H.
    """
    if math.isinf(cfg.beta):
        flow_cfg = FlowConfig(math.inf, cfg.M, cfg.dt, cfg.T, rescale_time=True)
        return gradient_flow_run(model, W, flow_cfg, X0, record_every)
    if X0.scale is not Scale.SQRTN:
        raise ConventionError("Langevin dynamics runs on the sqrt(N)-normalized manifold")
    rng = np.random.Generator(np.random.Philox(key=_philox_key([_seed_int(seed), 2])))
    Vs = model.V_as(Scale.SQRTN)
    traj = Trajectory(meta={"dynamics": "langevin", "beta": cfg.beta, "dt": cfg.dt, "T": cfg.T, "M": cfg.M,
                            "record_every": record_every})
    X = X0
    traj.record(0.0, correlation_matrix(Vs, X).data)
    h = cfg.dt
    n = 0 if h == 0 else int(round(cfg.T / h))
    sM = math.sqrt(cfg.M)
    for k in range(1, n + 1):
        drift = cfg.beta * sM * empirical_risk_force(X, W, model, cfg.M).data
        xi = project_tangent(X, rng.standard_normal(X.data.shape)).data
        X = polar_retract(X, drift * h + math.sqrt(2 * h) * xi)
        if k % record_every == 0 or k == n:
            traj.record(k * h, correlation_matrix(Vs, X).data)
    traj.final_X = X
    return traj


def laplacian_corr(X: StiefelPoint, V: StiefelPoint | None = None, M: np.ndarray | None = None,
                   metric: str = "canonical") -> np.ndarray:
    """Laplace-Beltrami operator applied to every ``m_ij`` (linear in X).

    ``canonical``: ``-((N-1)/N) m_ij``; ``euclidean``: ``-((N-(r+1)/2)/N) m_ij``.
    """
    if M is None:
        M = correlation_matrix(V.rescaled(X.scale), X).data
    N, r = X.N, X.r
    if metric == "canonical":
        return -((N - 1) / N) * M
    if metric == "euclidean":
        return -((N - (r + 1) / 2) / N) * M
    raise ValueError(f"unknown metric {metric!r}")


def _noise_inner(X: StiefelPoint, W: NoiseTensor, model: SpikedModel) -> np.ndarray:
    """``<grad_M H0, grad m_ij>`` for all i, j."""
    rg = riemannian_gradient(X, grad_H0(W, X, model.lambdas)).data
    return model.V.data.T @ rg / math.sqrt(X.N)


def generator_noise_part(X: StiefelPoint, W: NoiseTensor, model: SpikedModel, beta: float, M: float,
                         metric: str = "canonical") -> np.ndarray:
    """``L0 m_ij``: the noise part of the generator.

    Finite beta: ``Lap m_ij - beta <grad H0, grad m_ij>``. Infinite beta (gradient
    flow of the empirical risk): ``-(1/sqrt(M)) <grad H0, grad m_ij>``.
    """
    if X.scale is not Scale.SQRTN:
        raise ConventionError("the generator is evaluated on the sqrt(N) manifold")
    inner = _noise_inner(X, W, model)
    if math.isinf(beta):
        return -inner / math.sqrt(M)
    return laplacian_corr(X, model.V, metric=metric) - beta * inner


def generator_mij(
    X: StiefelPoint,
    W: NoiseTensor,
    model: SpikedModel,
    beta: float,
    M: float,
    rescale_time: bool = False,
    metric: str = "canonical",
) -> np.ndarray:
    """Generator applied to each correlation ``m_ij``.

    Finite beta: ``L0 m_ij + beta sqrt(M) F_ij(M)`` with F the population
    right-hand side. Infinite beta: the gradient-flow drift
    ``-(1/sqrt(M)) <grad H0, grad m_ij> + F_ij``, multiplied by ``sqrt(M)``
    when ``rescale_time`` is set.
    """
    Mc = correlation_matrix(model.V_as(Scale.SQRTN), X).data
    pop = corr_rhs(Mc, model) if model.planted else np.zeros_like(Mc)
    L0 = generator_noise_part(X, W, model, beta, M, metric)
    if math.isinf(beta):
        out = L0 + pop
        return out * math.sqrt(M) if rescale_time else out
    return L0 + beta * math.sqrt(M) * pop
