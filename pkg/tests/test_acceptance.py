"""Acceptance suite: one test per criterion, each reporting PASS or FAIL.

Run ``pytest tests/test_acceptance.py -v``; the verdict table is printed in
the terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm, ortho_group

from spikedpca.analysis import (
    ConditionParams,
    check_condition1,
    greedy_max_selection,
    init_matrix_I0,
    permutation_recovery,
    recovery_order,
    subspace_error,
)
from spikedpca.bounds import simulate_band_recursion, verify_recursion_bounds
from spikedpca.config import load_config, sweep_config
from spikedpca.dynamics import FlowConfig, generator_mij, gradient_flow_run
from spikedpca.harness import run_sweep, wilson_interval
from spikedpca.manifold import (
    Scale,
    StiefelPoint,
    correlation_matrix,
    polar_retract,
    project_tangent,
    riemannian_gradient,
    sample_invariant,
)
from spikedpca.model import NoiseTensor, Observation, loss, make_model
from spikedpca.population import (
    PopulationModel,
    closed_form_single,
    eigen_track,
    integrate_corr,
    integrate_gram,
    logistic_eigenvalue,
    preset,
    run_preset,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "acceptance"


def frame_with_corr(V, m, g):
    """Unit-scale frame whose correlations with ``V`` are exactly ``m``."""
    N, r = V.data.shape
    P = np.eye(N) - V.data @ V.data.T
    Q = np.linalg.qr(P @ g.standard_normal((N, r)))[0]
    S = np.linalg.cholesky(np.eye(r) - m.T @ m).T
    return StiefelPoint.checked(V.data @ m + Q @ S, Scale.UNIT)


def run_acceptance_sweep(name, out_csv):
    sweep = sweep_config(load_config(CONFIGS / f"{name}.toml"))
    t0 = time.perf_counter()
    summary = run_sweep(sweep, out_csv, deterministic=True, workers=1)
    return summary, time.perf_counter() - t0


def test_criterion_01_retractions_stay_on_manifold(verdict):
    g = np.random.default_rng(1)
    t0 = time.perf_counter()
    X = sample_invariant(64, 4, Scale.UNIT, g)
    for _ in range(10_000):
        X = polar_retract(X, project_tangent(X, 0.1 * g.standard_normal((64, 4))))
    dt = time.perf_counter() - t0
    err = X.orthogonality_error()
    verdict(1, err <= 1e-8 and dt < 5, f"||X^T X - I||_F = {err:.2e} after 1e4 retractions, {dt:.2f} s")


def test_criterion_02_riemannian_gradient_matches_finite_differences(verdict):
    g = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for p, N in [(2, 12), (3, 12), (4, 8)]:
        m = make_model(N, 2, p, [2.0, 1.0], g)
        Y = Observation(NoiseTensor.from_array(g.standard_normal((N,) * p)), m)
        X = sample_invariant(N, 2, Scale.UNIT, g)
        G = riemannian_gradient(X, Y.euclidean_gradient(X)).data
        h = 1e-5
        for _ in range(20):
            D = project_tangent(X, g.standard_normal((N, 2))).data
            D /= np.linalg.norm(D)
            fd = (loss(polar_retract(X, h * D), Y, m) - loss(polar_retract(X, -h * D), Y, m)) / (2 * h)
            worst = max(worst, abs(fd - np.sum(G * D)) / np.linalg.norm(G))
    dt = time.perf_counter() - t0
    verdict(2, worst <= 1e-5 and dt < 30, f"max relative error {worst:.2e} over 60 directions, {dt:.2f} s")


def test_criterion_03_generator_matches_flow(verdict):
    N, r, p = 12, 2, 3
    g = np.random.default_rng(3)
    m = make_model(N, r, p, [3.0, 1.0], g)
    X = frame_with_corr(m.V, np.array([[0.3, 0.1], [0.2, 0.25]]), g).rescaled(Scale.SQRTN)
    W = NoiseTensor.zeros(N, p)
    Vs = m.V_as(Scale.SQRTN)

    def slope(dt):
        X1 = gradient_flow_run(m, W, FlowConfig(dt=dt, T=dt), X).final_X
        return (correlation_matrix(Vs, X1).data - correlation_matrix(Vs, X).data) / dt

    rich = 2 * slope(5e-5) - slope(1e-4)
    G = generator_mij(X, W, m, math.inf, 1.0)
    err = np.max(np.abs(rich - G)) / np.max(np.abs(G))
    verdict(3, err <= 1e-4, f"relative error {err:.2e} (Richardson from dt = 1e-4, 5e-5)")


def test_criterion_04_single_spike_closed_forms(verdict):
    lam, dt = 1.0, 1e-3
    errs = {}
    for p, m0 in [(2, 0.1), (3, 0.1), (4, 0.2), (5, 0.2)]:
        if p == 2:
            T = math.log(0.9 / m0) / (2 * lam**2)
        else:
            T = (1 - (m0 / 0.9) ** (p - 2)) / (lam**2 * p * (p - 2) * m0 ** (p - 2))
        traj = integrate_corr([[m0]], PopulationModel((lam,), p), T, dt, rhs="drift", record_every=10)
        m = traj.corr_array()[:, 0, 0]
        exact = closed_form_single(m0, lam**2, p, traj.times_array())
        errs[p] = float(np.max(np.abs(m - exact)))
        assert m[-1] >= 0.9 - 1e-6
    worst = max(errs.values())
    verdict(4, worst <= 1e-6, "max |m - closed form| up to m = 0.9: " +
            ", ".join(f"p={p} {e:.1e}" for p, e in errs.items()))


def test_criterion_05_riccati_logistic(verdict):
    worst = 0.0
    for lam, seed in [(1.0, 5), (0.7, 6)]:
        th0 = np.array([0.01, 0.04, 0.2])
        Q = ortho_group.rvs(3, random_state=seed)
        for G0 in (np.diag(th0), Q @ np.diag(th0) @ Q.T):
            times, Gs = integrate_gram(G0, lam, 3.0, 1e-3, record_every=10)
            tracks = eigen_track(Gs)
            expected = np.stack([logistic_eigenvalue(t, lam, times) for t in np.sort(th0)[::-1]], axis=1)
            worst = max(worst, float(np.max(np.abs(tracks - expected))))
    verdict(5, worst <= 1e-6, f"max eigenvalue-track error {worst:.1e}")


def _final_thresholds(F, sigma):
    r = F.shape[0]
    matched = np.array([abs(F[sigma[j], j]) for j in range(r)])
    mask = np.ones_like(F, dtype=bool)
    mask[list(sigma), range(r)] = False
    return matched.min(), (np.abs(F[mask]).max() if mask.any() else 0.0)


def test_criterion_06_population_figures(verdict):
    t0 = time.perf_counter()
    notes, ok = [], True
    for name in ("fig-p3-r2", "fig-p3-r2-equal", "fig-p3-r4-equal"):
        cfg = preset(name)
        traj = run_preset(name, record_every=5)
        F = traj.final_corr
        sigma = permutation_recovery(F, 0.01)
        greedy = greedy_max_selection(init_matrix_I0(cfg["M0"], cfg["lambdas"], cfg["p"])).pairs
        good = sigma is not None
        if good:
            lo, hi = _final_thresholds(F, sigma)
            good = lo >= 0.99 and hi <= 1e-3 and recovery_order(traj, sigma, 0.9) == list(greedy)
        ok &= good
        notes.append(f"{name} {'ok' if good else 'bad'}")
    traj = run_preset("fig-p2-r2", record_every=5)
    F = traj.final_corr
    lo, hi = _final_thresholds(F, (0, 1))
    good = lo >= 0.99 and hi <= 1e-3 and recovery_order(traj, (0, 1), 0.9) == [(0, 0), (1, 1)]
    ok &= good
    notes.append(f"fig-p2-r2 {'ok' if good else 'bad'}")
    for name in ("fig-p2-r2-equal", "fig-p2-isotropic"):
        traj = run_preset(name, record_every=5)
        tracks = eigen_track([M.T @ M for M in traj.corr])
        # saturated eigenvalues jitter in the last bits
        good = bool(np.all(np.diff(tracks, axis=0) >= -1e-12) and np.all(tracks[-1] >= 0.99))
        ok &= good
        notes.append(f"{name} {'ok' if good else 'bad'}")
    dt = time.perf_counter() - t0
    verdict(6, ok and dt < 60, ", ".join(notes) + f"; {dt:.1f} s")


def naive_greedy(A):
    A = np.abs(np.asarray(A))
    rows, cols = set(range(len(A))), set(range(len(A)))
    out = []
    while rows:
        best = max(A[i, j] for i in rows for j in cols)
        i, j = min((i, j) for i in rows for j in cols if A[i, j] >= best - 1e-12)
        out.append((i, j))
        rows.discard(i)
        cols.discard(j)
    return out


def test_criterion_07_greedy_selection(verdict):
    g = np.random.default_rng(7)
    mism = sum(greedy_max_selection(A).pairs != naive_greedy(A)
               for A in (g.standard_normal((4, 4)) for _ in range(1000)))
    verdict(7, mism == 0, f"{1000 - mism}/1000 matrices match the naive oracle")


def _draw_bands(g, a_hi, b_hi):
    a1 = g.uniform(1e-3, a_hi)
    b1 = g.uniform(1e-3, b_hi)
    return (a1, a1 * g.uniform(1, 1.5)), (b1, b1 * g.uniform(1, 1.5))


def test_criterion_08_discrete_inequalities(verdict):
    g = np.random.default_rng(8)
    cases = [("gronwall", 2, 0.1, 0.5, 50), ("bihari", 3, 0.2, 0.3, 400), ("bihari", 4, 0.2, 0.3, 400),
             ("bihari", 5, 0.2, 0.3, 400), ("logistic", 2, 0.2, 0.5, 300)]
    fails, checked = [], 0
    for kind, p, a_hi, b_hi, steps in cases:
        for _ in range(100):
            a, b = _draw_bands(g, a_hi, b_hi)
            u = simulate_band_recursion(a, b, p, kind, steps, rng=g)
            rep = verify_recursion_bounds(u, a, b, p, kind)
            checked += rep.checked
            if not rep:
                fails.append((kind, p, rep.first_violation, rep.side))
    verdict(8, not fails, f"{5 * 100} draws, {checked} steps checked, exact containment, violations: {fails[:3]}")


def test_criterion_09_online_sgd_matrix(verdict, tmp_path):
    summary, dt = run_acceptance_sweep("sgd_matrix", tmp_path / "m.csv")
    (c,) = summary.cells
    verdict(9, c.fraction >= 0.8 and dt < 120,
            f"m >= 0.9 in {c.successes}/{c.trials} seeds, 95% CI [{c.ci_low:.2f}, {c.ci_high:.2f}], "
            f"{c.steps} steps, {dt:.1f} s")


def test_criterion_10_online_sgd_tensor(verdict, tmp_path):
    summary, dt = run_acceptance_sweep("sgd_tensor", tmp_path / "t.csv")
    (c,) = summary.cells
    rate = c.greedy_matches / c.greedy_evaluated if c.greedy_evaluated else 0.0
    glo, ghi = wilson_interval(c.greedy_matches, c.greedy_evaluated)
    ok = c.fraction >= 0.6 and rate >= 0.8 and dt < 300
    verdict(10, ok, f"permutation recovery {c.successes}/{c.trials} (CI [{c.ci_low:.2f}, {c.ci_high:.2f}]); "
                    f"greedy order {c.greedy_matches}/{c.greedy_evaluated} (CI [{glo:.2f}, {ghi:.2f}], need 0.8); "
                    f"{dt:.1f} s")


def test_criterion_11_null_model(verdict, tmp_path):
    summary, dt = run_acceptance_sweep("null_model", tmp_path / "n.csv")
    (c,) = summary.cells
    verdict(11, c.fraction >= 0.9, f"max |m_ij| <= 10/sqrt(N) in {c.successes}/{c.trials} seeds, {c.steps} steps")


def test_criterion_12_invariant_sampler(verdict):
    N, r, n = 100, 3, 10_000
    g = np.random.default_rng(12)
    V = sample_invariant(N, r, Scale.UNIT, g)
    params = ConditionParams(gamma1=3.0, gamma2=0.05)
    S = np.empty((n, r, r))
    signed = absolute = 0
    for k in range(n):
        X = sample_invariant(N, r, Scale.UNIT, g)
        S[k] = math.sqrt(N) * correlation_matrix(V, X).data
        signed += check_condition1(X, V, params).ok
        absolute += check_condition1(X, V, params, absolute=True).ok
    mean = np.abs(S.mean(axis=0)).max()
    var = S.var(axis=0)
    band = norm.cdf(3.0) - norm.cdf(0.05)
    ok = mean <= 0.05 and var.min() >= 0.95 and var.max() <= 1.05 and absolute / n >= 0.5
    verdict(12, ok, f"max |mean| {mean:.3f}, var in [{var.min():.3f}, {var.max():.3f}]; condition 1 pass rate "
                    f"{absolute / n:.3f} on |sqrt(N) m_ij| (signed band: {signed / n:.4f}, "
                    f"Gaussian prediction {band ** (r * r):.4f})")


def test_criterion_13_subspace_identity(verdict):
    g = np.random.default_rng(13)
    worst = 0.0
    for k in range(100):
        scale = Scale.UNIT if k % 2 else Scale.SQRTN
        N, r = int(g.integers(4, 40)), int(g.integers(1, 4))
        X, V = sample_invariant(N, r, scale, g), sample_invariant(N, r, scale, g)
        s4 = scale.squared(N) ** 2
        lhs = np.linalg.norm(X.data @ X.data.T - V.data @ V.data.T) ** 2 / s4
        M = correlation_matrix(V, X).data
        rhs = 2 * (r - np.trace(M.T @ M))
        worst = max(worst, abs(lhs - rhs), abs(subspace_error(X, V)["frob_sq"] - rhs))
    verdict(13, worst <= 1e-9, f"max deviation {worst:.1e} over 100 pairs")


def test_criterion_14_deterministic_result_files(verdict, tmp_path):
    same = []
    for name in ("sgd_matrix", "sgd_tensor", "null_model"):
        a, b = tmp_path / f"{name}-1.csv", tmp_path / f"{name}-2.csv"
        run_acceptance_sweep(name, a)
        run_acceptance_sweep(name, b)
        same.append(a.read_bytes() == b.read_bytes())
    verdict(14, all(same), f"byte-identical CSVs for {sum(same)}/3 acceptance configs")
