import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spikedpca.errors import ConventionError, DimensionError, SingularMatrixError
from spikedpca.manifold import (
    Scale,
    StiefelPoint,
    correlation_matrix,
    inv_sqrt_psd,
    overlap_gram,
    polar_retract,
    project_tangent,
    riemannian_gradient,
    sample_invariant,
    tangent_basis,
)


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.mark.parametrize("scale", [Scale.UNIT, Scale.SQRTN])
def test_sample_invariant_on_manifold(scale):
    X = sample_invariant(50, 4, scale, rng())
    assert X.orthogonality_error() <= 1e-10
    assert X.scale2 == (1 if scale is Scale.UNIT else 50)


def test_sample_invariant_rejects_wide():
    with pytest.raises(DimensionError):
        sample_invariant(2, 3, Scale.UNIT, rng())


def test_one_dimensional_stiefel_is_plus_minus_one():
    vals = [sample_invariant(1, 1, Scale.UNIT, rng(s)).data[0, 0] for s in range(400)]
    assert set(np.round(vals, 12)) == {-1.0, 1.0}
    frac = np.mean(np.array(vals) > 0)
    assert 0.4 < frac < 0.6


def test_sample_invariant_deterministic():
    a = sample_invariant(30, 3, Scale.UNIT, rng(7)).data
    b = sample_invariant(30, 3, Scale.UNIT, rng(7)).data
    assert np.array_equal(a, b)


def test_invariant_correlation_is_near_gaussian():
    N, r = 100, 3
    g = rng(11)
    V = sample_invariant(N, r, Scale.UNIT, g)
    vals = np.array([np.sqrt(N) * correlation_matrix(V, sample_invariant(N, r, Scale.UNIT, g)).data[0, 0]
                     for _ in range(10_000)])
    assert abs(stats.skew(vals)) <= 0.1
    assert abs(stats.kurtosis(vals)) <= 0.2


def test_point_is_frozen_copy():
    A = np.linalg.qr(rng().standard_normal((6, 2)))[0]
    X = StiefelPoint(A, Scale.UNIT)
    A[0, 0] = 99.0
    assert X.data[0, 0] != 99.0
    with pytest.raises(ValueError):
        X.data[0, 0] = 1.0


def test_checked_rejects_non_orthonormal():
    with pytest.raises(DimensionError):
        StiefelPoint.checked(np.ones((4, 2)), Scale.UNIT)


def test_project_tangent_examples():
    X = sample_invariant(10, 2, Scale.UNIT, rng())
    assert np.allclose(project_tangent(X, X.data).data, 0, atol=1e-14)
    A = rng(1).standard_normal((10, 2))
    P = project_tangent(X, A).data
    assert np.linalg.norm(X.data.T @ P + P.T @ X.data) <= 1e-10
    assert np.allclose(project_tangent(X, P).data, P, atol=1e-12)


def test_project_tangent_self_adjoint():
    X = sample_invariant(9, 3, Scale.SQRTN, rng(2))
    A, B = rng(3).standard_normal((2, 9, 3))
    lhs = np.sum(project_tangent(X, A).data * B)
    rhs = np.sum(A * project_tangent(X, B).data)
    assert abs(lhs - rhs) <= 1e-10


@pytest.mark.parametrize("scale", [Scale.UNIT, Scale.SQRTN])
def test_riemannian_gradient_of_x_vanishes(scale):
    X = sample_invariant(8, 2, scale, rng())
    assert np.allclose(riemannian_gradient(X, X.data).data, 0, atol=1e-12)


def test_riemannian_gradient_equals_projection():
    X = sample_invariant(12, 3, Scale.UNIT, rng(4))
    g = rng(5).standard_normal((12, 3))
    diff = riemannian_gradient(X, g).data - project_tangent(X, g).data
    assert np.linalg.norm(diff) <= 1e-12


def test_polar_retract_examples():
    X = sample_invariant(8, 2, Scale.UNIT, rng())
    assert polar_retract(X, np.zeros((8, 2))) is X
    U = project_tangent(X, rng(1).standard_normal((8, 2))).data
    U *= 0.3 / np.linalg.norm(U)
    assert polar_retract(X, U).orthogonality_error() <= 1e-12


def test_polar_retract_sphere_case():
    x = sample_invariant(5, 1, Scale.UNIT, rng())
    u = project_tangent(x, rng(2).standard_normal((5, 1))).data
    y = polar_retract(x, u).data
    expected = (x.data + u) / np.linalg.norm(x.data + u)
    assert np.allclose(y, expected, atol=1e-14)


def test_polar_retract_matches_tangent_formula():
    # (X + U)(I + U^T U / s2)^{-1/2} for tangent U at an exact point
    X = sample_invariant(20, 3, Scale.SQRTN, rng(8))
    U = project_tangent(X, rng(9).standard_normal((20, 3))).data
    ref = (X.data + U) @ inv_sqrt_psd(np.eye(3) + U.T @ U / X.scale2)
    assert np.allclose(polar_retract(X, U).data, ref, atol=1e-12)


def test_polar_retract_self_corrects_drift():
    X = sample_invariant(16, 2, Scale.UNIT, rng(3))
    bent = StiefelPoint(X.data * (1 + 1e-6), Scale.UNIT)
    U = project_tangent(bent, 1e-3 * rng(4).standard_normal((16, 2))).data
    assert polar_retract(bent, U).orthogonality_error() <= 1e-12


def test_many_retractions_stay_on_manifold():
    g = rng(12)
    X = sample_invariant(64, 4, Scale.UNIT, g)
    for _ in range(2000):
        U = project_tangent(X, 0.05 * g.standard_normal((64, 4)))
        X = polar_retract(X, U)
    assert X.orthogonality_error() <= 1e-8


def test_inv_sqrt_psd_examples():
    assert np.allclose(inv_sqrt_psd(np.eye(3)), np.eye(3))
    assert np.allclose(inv_sqrt_psd(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]))
    A = rng(6).standard_normal((4, 4))
    S = A @ A.T + 0.5 * np.eye(4)
    T = inv_sqrt_psd(S)
    assert np.linalg.norm(T @ T @ S - np.eye(4)) <= 1e-9
    with pytest.raises(SingularMatrixError):
        inv_sqrt_psd(np.diag([1.0, 0.0]))


def test_correlation_examples():
    V = sample_invariant(10, 3, Scale.UNIT, rng())
    assert np.allclose(correlation_matrix(V, V).data, np.eye(3))
    Q = np.linalg.qr(rng(1).standard_normal((3, 3)))[0]
    assert np.allclose(correlation_matrix(V, StiefelPoint(V.data @ Q, Scale.UNIT)).data, Q)
    assert np.allclose(correlation_matrix(V, StiefelPoint(-V.data, Scale.UNIT)).data, -np.eye(3))
    with pytest.raises(ConventionError):
        correlation_matrix(V, V.rescaled(Scale.SQRTN))


def test_overlap_gram_examples():
    G = overlap_gram(np.eye(3))
    assert np.allclose(G.data, np.eye(3)) and np.allclose(G.eigenvalues, 1)
    assert np.allclose(overlap_gram(np.zeros((2, 2))).data, 0)
    G = overlap_gram(np.diag([0.6, 0.8]))
    assert np.allclose(G.data, np.diag([0.36, 0.64]))
    assert np.allclose(G.eigenvalues, [0.64, 0.36])


@settings(max_examples=40, deadline=None)
@given(N=st.integers(2, 12), r=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_correlations_bounded_and_gram_spectrum(N, r, seed):
    r = min(r, N)
    g = rng(seed)
    V = sample_invariant(N, r, Scale.SQRTN, g)
    X = sample_invariant(N, r, Scale.SQRTN, g)
    M = correlation_matrix(V, X).data
    assert np.all(np.abs(M) <= 1 + 1e-10)
    G = overlap_gram(M)
    assert np.allclose(G.data, G.data.T, atol=1e-12)
    assert G.eigenvalues.min() >= -1e-10 and G.eigenvalues.max() <= 1 + 1e-10


@pytest.mark.parametrize("metric", ["euclidean", "canonical"])
def test_tangent_basis(metric):
    X = sample_invariant(7, 3, Scale.SQRTN, rng(2))
    B = tangent_basis(X, metric)
    assert B.shape == (7 * 3 - 6, 7, 3)
    for E in B:
        assert np.linalg.norm(X.data.T @ E + E.T @ X.data) <= 1e-10
    if metric == "euclidean":
        gram = np.einsum("aij,bij->ab", B, B)
        assert np.allclose(gram, np.eye(len(B)), atol=1e-12)
