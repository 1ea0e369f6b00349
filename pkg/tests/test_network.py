import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_stability.dataset import Dataset, gen_gaussian_regression
from relu_stability.linalg import top_eigenpair
from relu_stability.network import (ShallowParams, TwoLayerParams, fd_gradient, fd_hessian,
                                    forward_shallow, forward_two_layer, grad_loss, hessian_at_minimum,
                                    knot_clearance_of, load_params, loss, normalize_atoms,
                                    rescale_neurons, save_params, sharpness, tangent_features,
                                    TangentFeatures)
from relu_stability.pyramid import build_two_layer_pyramid
from relu_stability.stability import stability_norm
from relu_stability.training import init_shallow, init_two_layer


def random_net(d, k, seed):
    rng = np.random.default_rng(seed)
    return ShallowParams(rng.normal(size=(d, k)), rng.normal(size=k), rng.normal(size=k),
                         float(rng.normal()))


def clear_instance(d, k, n, seed, min_clearance=1e-3):
    """Random net and data with every pre-activation at least ``min_clearance`` from 0."""
    for s in range(seed, seed + 1000):
        p = random_net(d, k, s)
        ds = gen_gaussian_regression(n, d, s)
        if np.abs(ds.xs @ p.W1 + p.b1).min() >= min_clearance:
            return p, ds
    raise RuntimeError("no clear instance")


class TestForward:
    one = ShallowParams([[1.0]], [0.0], [1.0], 0.0)

    @pytest.mark.parametrize("x, y", [([2.0], 2.0), ([-1.0], 0.0)])
    def test_single_neuron(self, x, y):
        assert forward_shallow(self.one, x) == y

    def test_loop_oracle(self):
        p = random_net(3, 5, 0)
        x = np.random.default_rng(1).normal(size=3)
        y = p.b2
        for i in range(p.k):
            pre = sum(p.W1[j, i] * x[j] for j in range(3)) + p.b1[i]
            y += p.w2[i] * max(pre, 0.0)
        assert forward_shallow(p, x) == pytest.approx(y, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_positive_homogeneity(self, seed, c):
        p = random_net(2, 4, seed)
        q = rescale_neurons(p, np.full(p.k, c))
        xs = np.random.default_rng(seed).normal(size=(6, 2))
        np.testing.assert_allclose(forward_shallow(q, xs), forward_shallow(p, xs), rtol=1e-12, atol=1e-12)
        for a, b in zip(normalize_atoms(p), normalize_atoms(q)):
            assert a.a == pytest.approx(b.a, rel=1e-12)
            np.testing.assert_allclose(a.v_bar, b.v_bar, atol=1e-12)
            assert a.b_bar == pytest.approx(b.b_bar, rel=1e-12, abs=1e-12)


class TestLoss:
    def test_zero_net(self):
        ds = Dataset(np.random.default_rng(0).normal(size=(7, 2)), np.full(7, 2.0))
        assert loss(ShallowParams.zeros(2, 3), ds) == pytest.approx(2.0)

    def test_interpolant(self):
        p = random_net(2, 3, 0)
        xs = np.random.default_rng(1).normal(size=(4, 2))
        assert loss(p, Dataset(xs, forward_shallow(p, xs))) == 0.0

    def test_direct_sum(self):
        p = random_net(2, 3, 0)
        ds = gen_gaussian_regression(6, 2, 3)
        direct = sum((forward_shallow(p, x) - y) ** 2 for x, y in zip(ds.xs, ds.ys)) / 12
        assert loss(p, ds) == pytest.approx(direct, rel=1e-14)


class TestGradient:
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        p, ds = clear_instance(3, 4, 6, seed * 100)
        fd = fd_gradient(lambda th: loss(p.with_flat(th), ds), p.flat(), h=1e-5)
        assert np.abs(grad_loss(p, ds) - fd).max() <= 1e-6

    def test_zero_at_interpolation(self):
        p = random_net(2, 3, 0)
        xs = np.random.default_rng(1).normal(size=(4, 2))
        assert not np.any(grad_loss(p, Dataset(xs, forward_shallow(p, xs))))

    def test_closed_form_single_sample(self):
        p = ShallowParams([[2.0], [-1.0]], [0.5], [3.0], 0.25)
        x = np.array([1.0, 1.0])
        pre = 2.0 - 1.0 + 0.5
        r = 3.0 * pre + 0.25 - 1.0
        g = grad_loss(p, Dataset([x], [1.0]))
        np.testing.assert_allclose(g, r * np.array([3.0, 3.0, 3.0, pre, 1.0]))

    def test_batch_subset(self):
        p = random_net(2, 3, 0)
        ds = gen_gaussian_regression(8, 2, 0)
        np.testing.assert_allclose(grad_loss(p, ds, [1, 4]), grad_loss(p, ds.subset([1, 4])))


class TestTangentFeatures:
    def test_last_row_ones(self):
        tf = tangent_features(random_net(2, 3, 0), gen_gaussian_regression(5, 2, 0))
        np.testing.assert_array_equal(tf.phi[-1], 1.0)

    def test_dead_neuron_rows(self):
        p = ShallowParams([[1.0, 1.0]], [0.0, -100.0], [1.0, 1.0], 0.0)
        ds = Dataset([[0.5], [1.0], [2.0]], np.zeros(3))
        phi = tangent_features(p, ds).phi
        # layout: W1 (neuron-major), b1, w2, b2
        assert not phi[1].any() and not phi[3].any()

    def test_columns_are_output_gradients(self):
        p, ds = clear_instance(2, 3, 4, 0)
        phi = tangent_features(p, ds).phi
        for j, x in enumerate(ds.xs):
            fd = fd_gradient(lambda th: forward_shallow(p.with_flat(th), x), p.flat(), h=1e-6)
            np.testing.assert_allclose(phi[:, j], fd, atol=1e-7)


class TestHessian:
    def test_single_column(self):
        c = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(hessian_at_minimum(TangentFeatures(c[:, None], None)),
                                      np.outer(c, c))

    def test_matches_finite_differences(self, small_minimum):
        p, ds = small_minimum
        clr = knot_clearance_of(p, ds)
        assert clr > 1e-4
        h = min(1e-4, 0.1 * clr / ((1 + np.linalg.norm(ds.xs, axis=1).max())
                                   * (1 + np.abs(p.flat()).max())))
        fd = fd_hessian(lambda th: loss(p.with_flat(th), ds), p.flat(), h=h)
        assert np.abs(hessian_at_minimum(tangent_features(p, ds)) - fd).max() <= 1e-4


class TestSharpness:
    def test_bias_only(self):
        ds = Dataset(np.random.default_rng(0).normal(size=(5, 2)), np.full(5, 0.7))
        p = ShallowParams(np.zeros((2, 0)), np.zeros(0), np.zeros(0), 0.7)
        assert sharpness(p, ds) == pytest.approx(1.0)

    def test_assembled(self):
        p = random_net(3, 4, 2)
        ds = gen_gaussian_regression(9, 3, 2)
        H = hessian_at_minimum(tangent_features(p, ds))
        assert sharpness(p, ds) == pytest.approx(top_eigenpair(H).value, rel=1e-10)

    def test_lower_bound_at_minimum(self, small_minimum):
        p, ds = small_minimum
        s = stability_norm(normalize_atoms(p), ds)
        assert sharpness(p, ds) >= 1 + 2 * s - 1e-6


class TestTwoLayer:
    def test_pyramid_origin(self):
        assert forward_two_layer(build_two_layer_pyramid(2), np.zeros(2)) == 1.0

    def test_gradient(self):
        p = init_two_layer(2, 4, 3, seed=1)
        ds = gen_gaussian_regression(5, 2, 1)
        fd = fd_gradient(lambda th: loss(p.with_flat(th), ds), p.flat(), h=1e-6)
        assert np.abs(grad_loss(p, ds) - fd).max() <= 1e-6

    def test_zero_second_layer(self):
        p = init_two_layer(2, 4, 3, seed=1)
        p = TwoLayerParams(p.W1, p.b1, np.zeros_like(p.W2), p.b2, p.w3, p.b3)
        ds = gen_gaussian_regression(5, 2, 1)
        out = forward_two_layer(p, ds.xs)
        assert np.ptp(out) == 0.0
        assert not grad_loss(p, ds)[:p.d * p.k1 + p.k1].any()


class TestAtoms:
    def test_arithmetic(self):
        (atom,) = normalize_atoms(ShallowParams([[3.0], [4.0]], [-5.0], [2.0], 0.0))
        assert atom.a == pytest.approx(10.0)
        np.testing.assert_allclose(atom.v_bar, [0.6, 0.8])
        assert atom.b_bar == pytest.approx(1.0)

    def test_zero_weights_dropped(self):
        assert normalize_atoms(ShallowParams([[0.0]], [1.0], [1.0], 0.0)) == []

    def test_canceling_pair(self, two_points):
        p = ShallowParams([[1.0, 1.0], [0.0, 0.0]], [0.0, 0.0], [1.0, -1.0], 0.0)
        assert normalize_atoms(p, merge=True) == []
        assert stability_norm(normalize_atoms(p), two_points) > 0.0


def test_checkpoint_roundtrip():
    for p in (init_shallow(3, 5, 1.0, 0), init_two_layer(2, 3, 2, 1.0, 0)):
        q = load_params(save_params(p))
        assert type(q) is type(p)
        assert q.flat().tobytes() == p.flat().tobytes()


def test_clearance_of_matches_atoms(small_minimum):
    p, ds = small_minimum
    brute = min(abs(x @ p.W1[:, i] + p.b1[i]) / np.linalg.norm(p.W1[:, i])
                for x in ds.xs for i in range(p.k))
    assert knot_clearance_of(p, ds) == pytest.approx(brute, rel=1e-10)
    assert math.isfinite(brute)
