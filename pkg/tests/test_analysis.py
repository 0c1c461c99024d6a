import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from spikedpca.analysis import (
    ConditionParams,
    check_condition0_level1,
    check_condition1,
    check_condition2,
    detect_sequential_elimination,
    exact_recovery,
    greedy_max_selection,
    init_matrix_I0,
    matches_greedy_order,
    permutation_recovery,
    recovery_signs,
    subspace_error,
)
from spikedpca.errors import ConventionError, UnsupportedError
from spikedpca.manifold import Scale, StiefelPoint, sample_invariant
from spikedpca.model import NoiseTensor, make_model
from spikedpca.population import PopulationModel, integrate_corr
from spikedpca.trajectory import Trajectory


def naive_greedy(A):
    """Argmax-and-delete by full rescans of the remaining index sets."""
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


def constant_traj(M, n=5):
    tr = Trajectory()
    for t in range(n):
        tr.record(t, M)
    return tr


def test_i0_examples():
    M0 = np.array([[0.1, 0.2], [0.3, -0.4]])
    assert np.allclose(init_matrix_I0(M0, [2, 1], 3), [[0.4, 0.4], [0.6, 0.0]])
    assert np.all(init_matrix_I0(-np.abs(M0), [2, 1], 3) == 0)
    assert np.allclose(init_matrix_I0(M0, [2, 1], 4), np.outer([2, 1], [2, 1]) * M0**2)
    assert np.allclose(init_matrix_I0(M0, [2, 1], 2), np.outer([2, 1], [2, 1]))


def test_greedy_examples():
    assert greedy_max_selection([[3, 1], [2, 5]]).pairs == [(1, 1), (0, 0)]
    res = greedy_max_selection(np.diag([0.2, 0.9, 0.5]))
    assert res.pairs == [(1, 1), (2, 2), (0, 0)]
    assert res.values == [0.9, 0.5, 0.2]


def test_greedy_tie_break_is_lexicographic():
    assert greedy_max_selection(np.ones((3, 3))).pairs == [(0, 0), (1, 1), (2, 2)]
    A = np.array([[1.0, 2.0], [2.0 + 1e-13, 0.5]])
    assert greedy_max_selection(A).pairs[0] == (0, 1)


def test_greedy_matches_naive_oracle():
    g = np.random.default_rng(0)
    for _ in range(1000):
        A = g.standard_normal((4, 4))
        assert greedy_max_selection(A).pairs == naive_greedy(A)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 5), c=st.floats(1e-3, 1e3))
def test_greedy_is_a_matching_and_scale_invariant(seed, r, c):
    A = np.random.default_rng(seed).standard_normal((r, r))
    pairs = greedy_max_selection(A).pairs
    assert sorted(i for i, _ in pairs) == list(range(r))
    assert sorted(j for _, j in pairs) == list(range(r))
    assert greedy_max_selection(c * A).pairs == pairs


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 100))
def test_i0_selection_invariant_under_lambda_scaling(seed, c):
    g = np.random.default_rng(seed)
    M0 = g.uniform(-0.2, 0.2, (3, 3))
    lam = np.sort(g.uniform(0.5, 3, 3))[::-1]
    a = greedy_max_selection(init_matrix_I0(M0, lam, 3)).pairs
    b = greedy_max_selection(init_matrix_I0(M0, c * lam, 3)).pairs
    assert a == b


def test_elimination_trivial_trajectories():
    rep = detect_sequential_elimination(constant_traj(np.eye(3)), 0.1, 0.2)
    assert rep.satisfied and rep.stop_times == [0.0] * 3
    assert sorted(rep.ordering) == [(0, 0), (1, 1), (2, 2)]
    rep = detect_sequential_elimination(constant_traj(np.zeros((2, 2))), 0.1, 0.2)
    assert not rep.satisfied and rep.violations


def test_elimination_population_p3():
    traj = integrate_corr(np.full((2, 2), 0.01), PopulationModel((3.0, 1.0), 3), 150.0, 1e-2, record_every=10)
    rep = detect_sequential_elimination(traj, 0.1, 0.2)
    assert rep.satisfied
    assert rep.ordering == [(0, 0), (1, 1)]
    assert rep.stop_times[0] < rep.stop_times[1]
    assert matches_greedy_order(traj, [0, 1], (3.0, 1.0), 3, 0.9)


def test_elimination_vacuous_second_clause():
    # every column eventually near 1 in some row while other entries stay large
    tr = Trajectory()
    tr.record(0, np.array([[0.1, 0.5], [0.5, 0.1]]))
    tr.record(1, np.array([[0.95, 0.5], [0.5, 0.95]]))
    assert not detect_sequential_elimination(tr, 0.1, 0.2).satisfied
    rep = detect_sequential_elimination(tr, 0.1, 1.0)
    assert rep.satisfied and rep.ordering == [(0, 0), (1, 1)]


def test_elimination_rejects_bad_args():
    with pytest.raises(ValueError):
        detect_sequential_elimination(Trajectory(), 0.1, 0.2)
    with pytest.raises(ValueError):
        detect_sequential_elimination(constant_traj(np.eye(2)), 1.5, 0.2)


def test_recovery_examples():
    I = np.eye(3)
    assert exact_recovery(I, 0.1) and permutation_recovery(I, 0.1) == (0, 1, 2)
    A = np.fliplr(np.diag([1.0, -1.0, 1.0]))
    assert not exact_recovery(A, 0.1)
    assert permutation_recovery(A, 0.1) == (2, 1, 0)
    P = np.zeros((3, 3))
    P[[1, 2, 0], [0, 1, 2]] = 0.95
    assert permutation_recovery(P, 0.1) == (1, 2, 0)
    assert permutation_recovery(P, 0.01) is None
    assert recovery_signs(-I, (0, 1, 2)) == (-1, -1, -1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(0.01, 0.5))
def test_identity_permutation_iff_exact(seed, eps):
    g = np.random.default_rng(seed)
    M = np.diag(g.uniform(0.4, 1, 3)) * g.choice([-1, 1], 3) + g.uniform(-0.3, 0.3, (3, 3)) * (1 - np.eye(3))
    assert (permutation_recovery(M, eps) == (0, 1, 2)) == exact_recovery(M, eps)


def test_subspace_error_examples():
    g = np.random.default_rng(1)
    V = sample_invariant(12, 3, Scale.UNIT, g)
    assert subspace_error(V, V)["frob_sq"] == pytest.approx(0, abs=1e-12)
    P = np.eye(12) - V.data @ V.data.T
    Xp = StiefelPoint(np.linalg.qr(P @ g.standard_normal((12, 3)))[0], Scale.UNIT)
    out = subspace_error(Xp, V)
    assert out["frob_sq"] == pytest.approx(6) and out["trace_gap"] == pytest.approx(6)
    with pytest.raises(ConventionError):
        subspace_error(Xp.rescaled(Scale.SQRTN), V)


@pytest.mark.parametrize("scale", [Scale.UNIT, Scale.SQRTN])
def test_subspace_routes_agree(scale):
    g = np.random.default_rng(2)
    for _ in range(20):
        X = sample_invariant(20, 3, scale, g)
        V = sample_invariant(20, 3, scale, g)
        out = subspace_error(X, V)
        assert abs(out["frob_sq"] - out["trace_gap"]) <= 1e-10


def test_condition_params_validation():
    with pytest.raises(ValueError):
        ConditionParams(gamma1=1.0, gamma2=2.0)
    with pytest.raises(ValueError):
        ConditionParams(gamma1=3.0, gamma=4.0)


def frame_with_sqrtN_corr(V, target, g):
    """Unit frame whose entries sqrt(N) m_ij equal ``target`` (small values)."""
    N, r = V.data.shape
    m = np.asarray(target) / math.sqrt(N)
    P = np.eye(N) - V.data @ V.data.T
    Q = np.linalg.qr(P @ g.standard_normal((N, r)))[0]
    S = np.linalg.cholesky(np.eye(r) - m.T @ m).T
    return StiefelPoint.checked(V.data @ m + Q @ S, Scale.UNIT)


def test_condition1_examples():
    g = np.random.default_rng(3)
    V = sample_invariant(50, 2, Scale.UNIT, g)
    params = ConditionParams(gamma1=2.0, gamma2=0.5)
    X = frame_with_sqrtN_corr(V, np.ones((2, 2)), g)
    assert check_condition1(X, V, params).ok
    assert check_condition1(X.rescaled(Scale.SQRTN), V, params).ok
    Y = frame_with_sqrtN_corr(V, [[1.0, -1.0], [1.0, 1.0]], g)
    rep = check_condition1(Y, V, params)
    assert not rep.ok and rep.offending[0][:2] == (0, 1)
    assert check_condition1(Y, V, params, absolute=True).ok


def test_condition1_invariant_pass_rates():
    N, r, n = 400, 2, 1000
    g = np.random.default_rng(4)
    V = sample_invariant(N, r, Scale.UNIT, g)
    params = ConditionParams(gamma1=3.0, gamma2=0.05)
    signed = absolute = 0
    for _ in range(n):
        X = sample_invariant(N, r, Scale.UNIT, g)
        signed += check_condition1(X, V, params).ok
        absolute += check_condition1(X, V, params, absolute=True).ok
    # entries are close to independent standard Gaussians after sqrt(N) scaling
    band = norm.cdf(3.0) - norm.cdf(0.05)
    p_signed, p_abs = band ** (r * r), (2 * band) ** (r * r)
    assert abs(signed / n - p_signed) <= 4 * math.sqrt(p_signed * (1 - p_signed) / n)
    assert abs(absolute / n - p_abs) <= 4 * math.sqrt(p_abs * (1 - p_abs) / n)
    assert absolute / n >= 0.5


def test_condition2_examples():
    g = np.random.default_rng(5)
    V = sample_invariant(30, 1, Scale.UNIT, g)
    X = sample_invariant(30, 1, Scale.UNIT, g)
    assert check_condition2(X, V, [1.0], 3, ConditionParams()).ok
    V2 = sample_invariant(30, 2, Scale.UNIT, g)
    X2 = frame_with_sqrtN_corr(V2, [[1.0, 1.0], [0.5, 2.0]], g)
    assert not check_condition2(X2, V2, [1.0, 1.0], 3, ConditionParams()).ok
    X3 = frame_with_sqrtN_corr(V2, [[1.0, 2.0], [0.5, 1.5]], g)
    assert check_condition2(X3, V2, [1.0, 1.0], 3, ConditionParams(gamma=0.1)).ok
    with pytest.raises(ValueError):
        check_condition2(X3, V2, [1.0, 1.0], 2, ConditionParams())


def test_condition2_pass_rate_grows_as_gamma_shrinks():
    g = np.random.default_rng(6)
    V = sample_invariant(100, 2, Scale.UNIT, g)
    Xs = [sample_invariant(100, 2, Scale.UNIT, g) for _ in range(300)]
    rates = []
    for gamma in (2.0, 0.5, 0.1, 0.01):
        params = ConditionParams(gamma1=3.0, gamma2=0.05, gamma=gamma)
        rates.append(np.mean([check_condition2(X, V, [2.0, 1.0], 3, params).ok for X in Xs]))
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] > rates[0]


def test_condition0_examples():
    N, p = 20, 3
    g = np.random.default_rng(7)
    m = make_model(N, 2, p, [2.0, 1.0], g)
    X = sample_invariant(N, 2, Scale.SQRTN, g)
    rep = check_condition0_level1(X, NoiseTensor.zeros(N, p), m, 1.0, math.inf, 1e-9)
    assert rep.ok and rep.statistic == 0
    W = NoiseTensor.from_array(g.standard_normal((N,) * p))
    a = check_condition0_level1(X, W, m, 1.0, math.inf, 1.0).statistic
    b = check_condition0_level1(X, W, m, 4.0, math.inf, 1.0).statistic
    assert math.isclose(a, 2 * b, rel_tol=1e-12)
    with pytest.raises(UnsupportedError):
        check_condition0_level1(X, W, m, 1.0, math.inf, 1.0, level=2)
    with pytest.raises(ConventionError):
        check_condition0_level1(X.rescaled(Scale.UNIT), W, m, 1.0, math.inf, 1.0)


def test_condition0_tail_is_light():
    N, p = 100, 3
    g = np.random.default_rng(8)
    m = make_model(N, 2, p, [2.0, 1.0], g)
    X = sample_invariant(N, 2, Scale.SQRTN, g)
    stats = [check_condition0_level1(X, NoiseTensor.from_array(g.standard_normal((N,) * p)), m, 1.0, math.inf, 1.0)
             .statistic for _ in range(200)]
    assert np.percentile(stats, 99) <= 4 * np.median(stats)


def test_naive_oracle_itself_on_permutation_matrix():
    for perm in itertools.permutations(range(3)):
        A = np.zeros((3, 3))
        A[list(perm), [0, 1, 2]] = [3.0, 2.0, 1.0]
        assert naive_greedy(A) == [(perm[0], 0), (perm[1], 1), (perm[2], 2)]
