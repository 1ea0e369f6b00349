import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_stability.linalg import (NonConvergence, covariance, jacobi_eigh, top_eigenpair,
                                   top_singular_triple)


def random_symmetric(n, seed):
    a = np.random.default_rng(seed).normal(size=(n, n))
    return a + a.T


class TestTopEigenpair:
    def test_identity(self):
        res = top_eigenpair(np.eye(2))
        assert res.value == pytest.approx(1.0)
        assert np.linalg.norm(res.vector) == pytest.approx(1.0)

    def test_diagonal(self):
        res = top_eigenpair(np.diag([3.0, 1.0]))
        assert res.value == pytest.approx(3.0)
        assert abs(res.vector[0]) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_jacobi(self, seed):
        m = random_symmetric(6, seed)
        vals, _ = jacobi_eigh(m)
        assert top_eigenpair(m).value == pytest.approx(vals[-1], abs=1e-10)

    def test_negative_dominant(self):
        # largest algebraic eigenvalue, not largest magnitude
        assert top_eigenpair(np.diag([-5.0, 1.0])).value == pytest.approx(1.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            top_eigenpair(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_nonconvergence_is_raised(self):
        m = random_symmetric(80, 0)
        with pytest.raises(NonConvergence):
            top_eigenpair(m, max_iter=3)


class TestJacobi:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 10_000))
    def test_against_numpy(self, n, seed):
        m = random_symmetric(n, seed)
        vals, vecs = jacobi_eigh(m)
        np.testing.assert_allclose(vals, np.linalg.eigvalsh(m), atol=1e-10)
        np.testing.assert_allclose(m @ vecs, vecs * vals, atol=1e-9)


class TestSingularTriple:
    def test_one_by_one(self):
        sigma, u, v = top_singular_triple(np.array([[-2.0]]))
        assert sigma == pytest.approx(2.0)
        assert u[0] * v[0] == pytest.approx(-1.0)

    def test_diagonal(self):
        assert top_singular_triple(np.diag([2.0, 5.0]))[0] == pytest.approx(5.0)

    @pytest.mark.parametrize("shape", [(4, 7), (7, 4)])
    def test_random(self, shape):
        m = np.random.default_rng(3).normal(size=shape)
        sigma, u, v = top_singular_triple(m)
        assert sigma ** 2 == pytest.approx(np.linalg.eigvalsh(m.T @ m)[-1], abs=1e-10)
        np.testing.assert_allclose(m @ v, sigma * u, atol=1e-8)


class TestCovariance:
    def test_symmetric_pair(self):
        np.testing.assert_array_equal(covariance([[1.0, 0.0], [-1.0, 0.0]]), [[1.0, 0.0], [0.0, 0.0]])

    def test_single_point(self):
        np.testing.assert_array_equal(covariance([[2.0, 3.0]]), np.zeros((2, 2)))

    def test_two_pass_oracle(self):
        pts = np.random.default_rng(0).normal(size=(5, 3))
        mean = [sum(p[i] for p in pts) / 5 for i in range(3)]
        oracle = [[sum((p[i] - mean[i]) * (p[j] - mean[j]) for p in pts) / 5 for j in range(3)]
                  for i in range(3)]
        np.testing.assert_allclose(covariance(pts), oracle, atol=1e-14)
