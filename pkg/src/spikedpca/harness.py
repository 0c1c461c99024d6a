"""Trial execution, parameter sweeps, threshold estimation and result files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from . import __version__
from .analysis import (
    ConditionParams,
    EliminationReport,
    check_condition1,
    check_condition2,
    detect_sequential_elimination,
    exact_recovery,
    matches_greedy_order,
    permutation_recovery,
)
from .dynamics import FlowConfig, SgdConfig, gradient_flow_run, langevin_run, sgd_run, step_size_schedule
from .errors import BudgetError, ConfigError
from .manifold import Scale, StiefelPoint, correlation_matrix, sample_invariant
from .model import GradMode, NoiseDist, NoiseSpec, NoiseTensor, make_model, sample_noise
from .population import PopulationModel, integrate_corr
from .trajectory import Trajectory

log = logging.getLogger(__name__)

WORKERS_ENV = "SPIKEDPCA_WORKERS"
FLOP_LIMIT = 1e12
DYNAMICS = ("sgd", "gradient_flow", "langevin", "population")
SUCCESS = ("exact", "permutation", "subspace", "null_bounded")
INITS = ("invariant", "condition1")
NOISE_BACKENDS = ("streamed", "gaussian_law", "none")
MAX_INIT_TRIES = 100_000


def fmt_float(x) -> str:
    """17 significant digits; empty for NaN/None."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


@dataclass(frozen=True)
class TrialConfig:
    """Everything that determines one trial, apart from the seed.

    ``delta=None`` takes the step size from ``step_size_schedule`` with
    ``regime`` and ``C_delta``. ``M0`` (population only) overrides the
    sampled initial correlations. ``success="null_bounded"`` counts a trial
    as a success when every ``|m_ij|`` ends at most ``null_c / sqrt(N)``, the
    check used for the null model.
    """

    N: int = 32
    r: int = 1
    p: int = 3
    lambdas: tuple = (1.0,)
    noise_dist: str = "gaussian"
    sigma: float = 1.0
    planted: bool = True
    dynamics: str = "sgd"
    # online SGD
    steps: int = 0
    delta: float | None = None
    regime: str | None = None
    C_delta: float = 1.0
    grad_mode: str = "exact"
    noise_backend: str = "streamed"
    record_every: int | None = None
    # flows and population
    beta: float = math.inf
    M: float = 1.0
    dt: float = 1e-2
    T: float = 1.0
    M0: tuple | None = None
    # initialization, recovery and conditions
    init: str = "invariant"
    eps: float = 0.1
    eps_prime: float = 0.2
    success: str = "permutation"
    gamma0: float = 1.0
    gamma1: float = 3.0
    gamma2: float = 0.05
    gamma: float = 0.1
    null_c: float = 10.0

    def __post_init__(self):
        lam = tuple(float(x) for x in np.atleast_1d(self.lambdas))
        object.__setattr__(self, "lambdas", lam)
        if self.M0 is not None:
            object.__setattr__(self, "M0", tuple(tuple(float(x) for x in row) for row in self.M0))
        if len(lam) != self.r:
            raise ConfigError(f"expected {self.r} lambdas, got {len(lam)}")
        if self.dynamics not in DYNAMICS:
            raise ConfigError(f"dynamics must be one of {DYNAMICS}, got {self.dynamics!r}")
        if self.success not in SUCCESS:
            raise ConfigError(f"success must be one of {SUCCESS}, got {self.success!r}")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not (0 < self.eps < 1 and 0 < self.eps_prime <= 1):
            raise ConfigError("need 0 < eps < 1 and 0 < eps_prime <= 1")
        if self.M0 is not None and np.shape(self.M0) != (self.r, self.r):
            raise ConfigError(f"M0 must be {self.r}x{self.r}")
        if self.noise_backend not in NOISE_BACKENDS:
            raise ConfigError(f"noise_backend must be one of {NOISE_BACKENDS}, got {self.noise_backend!r}")
        if self.noise_backend == "gaussian_law" and self.noise_dist != "gaussian":
            raise ConfigError("the gaussian_law backend needs Gaussian noise")
        try:
            NoiseSpec(NoiseDist(self.noise_dist), self.sigma)
            GradMode(self.grad_mode)
            self.condition_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def condition_params(self) -> ConditionParams:
        return ConditionParams(self.gamma0, self.gamma1, self.gamma2, self.gamma)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["M0"] = None if self.M0 is None else [list(row) for row in self.M0]
        return d

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def resolved_delta(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        regime = self.regime or ("TensorP3plus" if self.p >= 3 else "MatrixSeparated")
        return step_size_schedule(self.p, self.N, regime, C_delta=self.C_delta)


def _canonical(obj):
    if isinstance(obj, float):
        return fmt_float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def config_hash(d: dict) -> str:
    """Short SHA-256 digest of a canonical JSON rendering."""
    blob = json.dumps(_canonical(d), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrialRecord:
    config_hash: str
    seed: int
    exact_recovery: bool
    permutation: tuple | None
    elimination: EliminationReport
    hitting_times: dict
    subspace_error_final: float
    condition_flags: dict
    neumann_violations: int
    runtime: float
    success: bool
    delta: float | None = None
    steps: int = 0
    greedy_match: bool | None = None
    trajectory: Trajectory | None = field(default=None, repr=False, compare=False)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("trajectory")
        return d


def _sample_init(cfg: TrialConfig, V: StiefelPoint, rng: np.random.Generator) -> StiefelPoint:
    params = cfg.condition_params()
    for _ in range(MAX_INIT_TRIES):
        X0 = sample_invariant(cfg.N, cfg.r, Scale.UNIT, rng)
        if cfg.init == "invariant" or check_condition1(X0, V, params).ok:
            return X0
    raise RuntimeError(f"no start satisfying the correlation band after {MAX_INIT_TRIES} draws")


def _condition_flags(cfg: TrialConfig, X0: StiefelPoint, V: StiefelPoint) -> dict:
    params = cfg.condition_params()
    flags = {
        "condition1": check_condition1(X0, V, params).ok,
        "condition1_abs": check_condition1(X0, V, params, absolute=True).ok,
    }
    if cfg.p >= 3:
        flags["condition2"] = check_condition2(X0, V, cfg.lambdas, cfg.p, params).ok
    return flags


def column_hitting_times(traj: Trajectory, level: float) -> dict:
    """``T_j``: first recorded time some ``|m_ij|`` in column j reaches ``level``."""
    H = traj.hitting_times(level)
    with np.errstate(all="ignore"):
        col = np.where(np.all(np.isnan(H), axis=0), np.nan, np.nanmin(np.where(np.isnan(H), np.inf, H), axis=0))
    return {f"T{j + 1}": float(col[j]) for j in range(H.shape[1])}


def judge(cfg: TrialConfig, Mf: np.ndarray) -> tuple[bool, tuple | None, bool, float]:
    """(success, sigma, exact, subspace error) for final correlations."""
    ex = exact_recovery(Mf, cfg.eps)
    sigma = permutation_recovery(Mf, cfg.eps)
    sub = float(2 * (cfg.r - np.sum(Mf * Mf)))
    bounded = bool(np.max(np.abs(Mf)) <= cfg.null_c / math.sqrt(cfg.N))
    ok = {"exact": ex, "permutation": sigma is not None, "subspace": sub <= cfg.eps,
          "null_bounded": bounded}[cfg.success]
    return ok, sigma, ex, sub


def run_trial(cfg: TrialConfig, seed: int, keep_trajectory: bool = False, deterministic: bool = True) -> TrialRecord:
    """Run one trial and evaluate every detector on its trajectory.

    The spike frame and starting point come from a generator keyed by
    ``(seed, 0)``; the dynamics draw their own noise from ``seed``.
    """
    t0 = time.perf_counter()
    seed = int(seed)
    rng = np.random.default_rng([seed, 0])
    model = make_model(cfg.N, cfg.r, cfg.p, cfg.lambdas, rng, planted=cfg.planted)
    X0 = _sample_init(cfg, model.V, rng)
    flags = _condition_flags(cfg, X0, model.V)
    noise = NoiseSpec(NoiseDist(cfg.noise_dist), cfg.sigma)
    delta = None
    if cfg.dynamics == "sgd":
        delta = cfg.resolved_delta()
        scfg = SgdConfig(delta, cfg.steps, GradMode(cfg.grad_mode), noise, cfg.record_every, cfg.noise_backend)
        traj = sgd_run(model, scfg, X0, seed)
    elif cfg.dynamics == "population":
        M0 = np.array(cfg.M0) if cfg.M0 is not None else correlation_matrix(model.V, X0).data
        pm = PopulationModel(cfg.lambdas, cfg.p)
        traj = integrate_corr(M0, pm, cfg.T, cfg.dt, record_every=cfg.record_every or 1)
    else:
        if cfg.noise_backend == "none":
            W = NoiseTensor.zeros(cfg.N, cfg.p)
        else:
            W = sample_noise(cfg.N, cfg.p, noise, [seed, 3])
        fcfg = FlowConfig(cfg.beta, cfg.M, cfg.dt, cfg.T)
        Xs = X0.rescaled(Scale.SQRTN)
        every = cfg.record_every or 1
        if cfg.dynamics == "gradient_flow":
            traj = gradient_flow_run(model, W, fcfg, Xs, every)
        else:
            traj = langevin_run(model, W, fcfg, Xs, seed, every)
    Mf = traj.final_corr
    ok, sigma, ex, sub = judge(cfg, Mf)
    elim = detect_sequential_elimination(traj, cfg.eps, cfg.eps_prime)
    greedy = None if sigma is None else matches_greedy_order(traj, sigma, cfg.lambdas, cfg.p, 1 - cfg.eps)
    runtime = 0.0 if deterministic else time.perf_counter() - t0
    return TrialRecord(
        config_hash=cfg.config_hash(),
        seed=seed,
        exact_recovery=ex,
        permutation=sigma,
        elimination=elim,
        hitting_times=column_hitting_times(traj, 1 - cfg.eps),
        subspace_error_final=sub,
        condition_flags=flags,
        neumann_violations=int(traj.meta.get("neumann_violations", 0)),
        runtime=runtime,
        success=bool(ok),
        delta=delta,
        steps=cfg.steps if cfg.dynamics == "sgd" else 0,
        greedy_match=greedy,
        trajectory=traj if keep_trajectory else None,
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepConfig:
    """Grid of ``N`` values times step budgets, ``trials`` seeds per cell.

    ``budget="power"``: ``steps = ceil(coeff * N^alpha)`` for each alpha in
    ``budget_values``. ``budget="log2"``: ``steps = ceil(c * log(N)^2)`` for
    each c in ``budget_values``.
    """

    base: TrialConfig
    N_values: tuple = (16,)
    budget: str = "power"
    budget_values: tuple = (1.0,)
    coeff: float = 1.0
    trials: int = 10
    master_seed: int = 0
    workers: int | None = None
    allow_large: bool = False

    def __post_init__(self):
        object.__setattr__(self, "N_values", tuple(int(n) for n in self.N_values))
        object.__setattr__(self, "budget_values", tuple(float(a) for a in self.budget_values))
        if not self.N_values or not self.budget_values:
            raise ConfigError("the sweep grid is empty")
        if self.trials < 1:
            raise ConfigError("need at least one trial per cell")
        if self.budget not in ("power", "log2"):
            raise ConfigError(f"budget must be 'power' or 'log2', got {self.budget!r}")

    def steps_for(self, N: int, a: float) -> int:
        if self.budget == "power":
            return int(math.ceil(self.coeff * N**a - 1e-9))
        return int(math.ceil(a * math.log(N) ** 2 - 1e-9))

    def cells(self) -> list[tuple[int, int, float, int]]:
        """``(cell_id, N, budget value, steps)`` in row-major order."""
        out = []
        for N in self.N_values:
            for a in self.budget_values:
                out.append((len(out), N, a, self.steps_for(N, a)))
        return out

    def cell_config(self, N: int, steps: int) -> TrialConfig:
        return dataclasses.replace(self.base, N=N, steps=steps)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("N_values", "budget", "budget_values", "coeff", "trials", "master_seed")}
        d["base"] = self.base.to_dict()
        return d

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


def trial_seed(master_seed: int, cell_id: int, trial: int) -> int:
    """Seed of one trial, a hash of (master seed, cell, trial) only."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(cell_id), int(trial)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def estimate_flops(sweep: SweepConfig) -> float:
    """``N^{p-1} r`` per gradient, times steps and trials, summed over cells."""
    total = 0.0
    for _, N, _, steps in sweep.cells():
        total += float(N) ** (sweep.base.p - 1) * sweep.base.r * max(steps, 1) * sweep.trials
    return total


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be positive")
        return n
    import psutil

    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def csv_columns(r: int) -> list[str]:
    return (
        ["cell_id", "N", "r", "p", "lambda_csv", "dynamics", "budget_exponent", "steps", "delta", "seed",
         "exact", "permutation_sigma", "elim_ok"]
        + [f"T{j + 1}" for j in range(r)]
        + ["subspace_err", "neumann_violations", "wall_seconds", "success", "greedy_match", "error"]
    )


def _row(cell_id: int, a: float, cfg: TrialConfig, seed: int, rec: TrialRecord | None, err: str = "") -> list[str]:
    lam = ";".join(fmt_float(x) for x in cfg.lambdas)
    head = [str(cell_id), str(cfg.N), str(cfg.r), str(cfg.p), lam, cfg.dynamics, fmt_float(a), str(cfg.steps)]
    if rec is None:
        return head + [fmt_float(cfg.resolved_delta() if cfg.dynamics == "sgd" else None), str(seed), "", "", ""] + \
            [""] * cfg.r + ["", "", "", "0", "", err]
    sigma = "" if rec.permutation is None else ";".join(str(s + 1) for s in rec.permutation)
    Ts = [fmt_float(rec.hitting_times[f"T{j + 1}"]) for j in range(cfg.r)]
    return head + [fmt_float(rec.delta), str(seed), str(int(rec.exact_recovery)), sigma,
                   str(int(rec.elimination.satisfied))] + Ts + [
        fmt_float(rec.subspace_error_final), str(rec.neumann_violations), fmt_float(rec.runtime),
        str(int(rec.success)), "" if rec.greedy_match is None else str(int(rec.greedy_match)), ""]


def _work(args):
    cell_id, a, cfg, seed, deterministic = args
    try:
        rec = run_trial(cfg, seed, deterministic=deterministic)
        return cell_id, seed, _row(cell_id, a, cfg, seed, rec)
    except Exception as exc:  # recorded per cell, never fatal
        return cell_id, seed, _row(cell_id, a, cfg, seed, None, f"{type(exc).__name__}: {exc}".replace("\n", " "))


def provenance_line(h: str) -> str:
    return f"# spikedpca {__version__} config_hash={h}"


def _render(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def read_results(path) -> tuple[str | None, list[str], list[list[str]]]:
    """(provenance line, header, rows) of a result CSV."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    prov = lines[0] if lines and lines[0].startswith("#") else None
    body = lines[1:] if prov else lines
    rows = list(csv.reader(body))
    if not rows:
        return prov, [], []
    return prov, rows[0], rows[1:]


@dataclass
class CellSummary:
    cell_id: int
    N: int
    budget_value: float
    steps: int
    trials: int
    successes: int
    errors: int
    fraction: float
    ci_low: float
    ci_high: float
    greedy_matches: int = 0
    greedy_evaluated: int = 0


@dataclass
class SweepSummary:
    cells: list
    budget: str
    threshold: dict | None = None

    def table(self) -> list[dict]:
        return [dataclasses.asdict(c) for c in self.cells]


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def summarize_rows(header: list[str], rows: list[list[str]], budget: str = "power") -> SweepSummary:
    """Per-cell success fractions with Wilson intervals from result rows."""
    ix = {c: i for i, c in enumerate(header)}
    cells: dict[int, dict] = {}
    for row in rows:
        cid = int(row[ix["cell_id"]])
        c = cells.setdefault(cid, dict(N=int(row[ix["N"]]), a=float(row[ix["budget_exponent"]]),
                                        steps=int(row[ix["steps"]]), n=0, k=0, e=0, gm=0, ge=0))
        if row[ix["error"]]:
            c["e"] += 1
        c["n"] += 1
        c["k"] += row[ix["success"]] == "1"
        if row[ix["success"]] == "1" and row[ix["greedy_match"]] != "":
            c["ge"] += 1
            c["gm"] += row[ix["greedy_match"]] == "1"
    out = []
    for cid in sorted(cells):
        c = cells[cid]
        lo, hi = wilson_interval(c["k"], c["n"])
        out.append(CellSummary(cid, c["N"], c["a"], c["steps"], c["n"], c["k"], c["e"], c["k"] / c["n"], lo, hi,
                               c["gm"], c["ge"]))
    return SweepSummary(out, budget)


def run_sweep(
    sweep: SweepConfig,
    out_csv=None,
    deterministic: bool = True,
    force: bool = False,
    workers: int | None = None,
    progress=None,
) -> SweepSummary:
    """Run every (cell, trial) not already present in ``out_csv``.

    Rows are written sorted by ``(cell_id, seed)``; rows already on disk are
    kept verbatim, so resuming never rewrites completed cells. A results file
    produced by a different sweep configuration is refused unless ``force``.
    """
    flops = estimate_flops(sweep)
    if flops > FLOP_LIMIT and not sweep.allow_large:
        raise BudgetError(f"estimated {flops:.3g} FLOPs exceeds {FLOP_LIMIT:.0e}; allow_large overrides")
    h = sweep.config_hash()
    r = sweep.base.r
    header = csv_columns(r)
    existing: dict[tuple[int, int], list[str]] = {}
    if out_csv is not None and Path(out_csv).exists() and not force:
        prov, old_header, old_rows = read_results(out_csv)
        if prov != provenance_line(h) or old_header != header:
            raise ConfigError(f"{out_csv} belongs to another sweep; pass force to overwrite")
        for row in old_rows:
            existing[(int(row[0]), int(row[header.index("seed")]))] = row
    jobs = []
    for cell_id, N, a, steps in sweep.cells():
        cfg = sweep.cell_config(N, steps)
        for trial in range(sweep.trials):
            seed = trial_seed(sweep.master_seed, cell_id, trial)
            if (cell_id, seed) not in existing:
                jobs.append((cell_id, a, cfg, seed, deterministic))
    n_workers = workers or sweep.workers or default_workers()
    results = dict(existing)
    if n_workers <= 1 or len(jobs) <= 1:
        it = map(_work, jobs)
        for cid, seed, row in it:
            results[(cid, seed)] = row
            if progress:
                progress(cid, seed)
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for cid, seed, row in pool.map(_work, jobs, chunksize=1):
                results[(cid, seed)] = row
                if progress:
                    progress(cid, seed)
    rows = [results[k] for k in sorted(results)]
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(out_csv).write_text(provenance_line(h) + "\n" + _render([header] + rows), encoding="utf-8")
    summary = summarize_rows(header, rows, sweep.budget)
    by_N: dict[int, int] = {}
    for c in summary.cells:
        by_N[c.N] = by_N.get(c.N, 0) + 1
    if min(by_N.values()) >= 3:
        summary.threshold = estimate_threshold(summary)
    return summary


# ---------------------------------------------------------------------------
# threshold estimation


def _fit_logistic(a: np.ndarray, k: np.ndarray, n: np.ndarray) -> tuple[float, float, float]:
    """MLE of ``P(success) = sigmoid(s (a - a0))`` with ``s > 0``; returns (a0, s, se(a0))."""
    span = float(a.max() - a.min()) or 1.0

    def nll(theta):
        a0, ls = theta
        z = np.exp(ls) * (a - a0)
        # log sigmoid(z) and log sigmoid(-z), stable
        return -float(np.sum(-k * np.logaddexp(0, -z) - (n - k) * np.logaddexp(0, z)))

    x0 = [float(np.mean(a)), math.log(4.0 / span)]
    bounds = [(a.min() - span, a.max() + span), (math.log(1e-3 / span), math.log(1e3 / span))]
    res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds)
    a0, ls = res.x
    # curvature in a0 at the optimum for a standard error
    h = 1e-4 * span
    c = (nll([a0 + h, ls]) - 2 * nll([a0, ls]) + nll([a0 - h, ls])) / h**2
    se = 1 / math.sqrt(c) if c > 0 else math.inf
    return float(a0), float(math.exp(ls)), float(se)


def estimate_threshold(summary: SweepSummary) -> dict:
    """Locate the 50% success crossing in the budget value for each N.

    Returns ``{"per_N": {N: {...}}, "slope_vs_logN": ..., "reliable": bool}``.
    Per N the entry holds ``alpha`` (the crossing), ``se`` and ``flag``:
    ``"ok"``, ``"below_grid"`` (all cells succeed), ``"above_grid"`` (all fail)
    or ``"non_monotone"`` (a higher budget does significantly worse, in which
    case no crossing is reported). A fitted crossing outside the grid is
    flagged ``below_grid`` / ``above_grid`` as well.
    """
    groups: dict[int, list[CellSummary]] = {}
    for c in summary.cells:
        groups.setdefault(c.N, []).append(c)
    per_N = {}
    for N, cells in sorted(groups.items()):
        if len(cells) < 3:
            raise ValueError(f"need at least 3 budget cells for N={N}, got {len(cells)}")
        cells = sorted(cells, key=lambda c: c.budget_value)
        a = np.array([c.budget_value for c in cells])
        k = np.array([c.successes for c in cells], dtype=float)
        n = np.array([c.trials for c in cells], dtype=float)
        grid = (float(a.min()), float(a.max()))
        non_mono = any(
            cells[i].ci_low > cells[j].ci_high for i in range(len(cells)) for j in range(i + 1, len(cells))
        )
        if non_mono:
            per_N[N] = {"alpha": None, "se": None, "flag": "non_monotone", "grid": grid}
        elif np.all(k == n):
            per_N[N] = {"alpha": grid[0], "se": None, "flag": "below_grid", "grid": grid}
        elif np.all(k == 0):
            per_N[N] = {"alpha": grid[1], "se": None, "flag": "above_grid", "grid": grid}
        else:
            a0, s, se = _fit_logistic(a, k, n)
            flag = "below_grid" if a0 < grid[0] else "above_grid" if a0 > grid[1] else "ok"
            per_N[N] = {"alpha": a0, "se": se, "slope": s, "flag": flag, "grid": grid}
    ok = [(N, v["alpha"]) for N, v in per_N.items() if v["flag"] == "ok"]
    slope = None
    if len(ok) >= 2:
        x = np.log([N for N, _ in ok])
        y = np.array([al for _, al in ok])
        slope = float(np.polyfit(x, y, 1)[0])
    return {"per_N": per_N, "slope_vs_logN": slope, "reliable": all(v["flag"] == "ok" for v in per_N.values())}


# ---------------------------------------------------------------------------
# trajectory files


def _json17(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        s = fmt_float(obj)
        return s if s and "inf" not in s else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_json17(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_json17(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps17(obj) -> str:
    """JSON with every float written to 17 significant digits (non-finite -> null)."""
    return _json17(obj)


def write_trajectory_json(path, traj: Trajectory, extra_meta: dict | None = None) -> None:
    d = traj.to_json_dict()
    if extra_meta:
        d["meta"] = {**d["meta"], **extra_meta}
    Path(path).write_text(dumps17(d) + "\n", encoding="utf-8")
