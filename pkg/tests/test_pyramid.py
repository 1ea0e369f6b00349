import numpy as np
import pytest

from relu_stability.network import forward_two_layer, grad_loss, loss, sharpness
from relu_stability.pyramid import (KNOT_MARGIN, build_two_layer_pyramid, depth_separation_trend,
                                    jittered_grid, probe_grid, pyramid_dataset,
                                    pyramid_stability_demo, pyramid_value)
from relu_stability.training import Status


@pytest.mark.parametrize("x, y", [((0.0, 0.0), 1.0), ((0.5, 0.5), 0.0), ((0.25, -0.25), 0.5)])
def test_pyramid_value(x, y):
    assert pyramid_value(x) == y


class TestExactNet:
    def test_widths(self):
        p = build_two_layer_pyramid(2)
        assert (p.k1, p.k2) == (4, 1)

    def test_value(self):
        assert forward_two_layer(build_two_layer_pyramid(2), np.array([0.3, 0.1])) == pytest.approx(0.6)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_matches_everywhere(self, d):
        xs = np.random.default_rng(d).uniform(-2, 2, size=(500, d))
        np.testing.assert_allclose(forward_two_layer(build_two_layer_pyramid(d), xs),
                                   pyramid_value(xs), atol=1e-15)

    def test_interpolates_and_is_stationary(self):
        ds = pyramid_dataset(2, 8, 0)
        p = build_two_layer_pyramid(2)
        assert loss(p, ds) <= 1e-30
        assert not grad_loss(p, ds).any()
        assert np.isfinite(sharpness(p, ds))


class TestGrid:
    def test_clear_of_knots(self):
        pts = jittered_grid(2, 8, 3)
        assert pts.shape == (64, 2)
        assert np.abs(pts).min() >= KNOT_MARGIN
        assert np.abs(np.abs(pts).sum(axis=1) - 1.0).min() / np.sqrt(2) >= KNOT_MARGIN

    def test_deterministic(self):
        assert jittered_grid(2, 5, 1).tobytes() == jittered_grid(2, 5, 1).tobytes()

    def test_probe_grid(self):
        assert probe_grid(2, 41).shape == (41 * 41, 2)


class TestDemo:
    def test_exact_start_does_not_move(self):
        rep = pyramid_stability_demo(perturb=0.0, seed=0)
        assert rep.status == Status.CONVERGED and rep.steps == 0
        assert rep.probe_rmse == 0.0

    @pytest.mark.parametrize("seed", range(3))
    def test_recovers_at_one_over_lambda(self, seed):
        rep = pyramid_stability_demo(2, 64, 1e-3, seed)
        assert rep.converged and rep.final_loss <= 1e-8
        assert rep.probe_rmse <= 1e-3

    @pytest.mark.parametrize("seed", range(3))
    def test_fails_at_two_and_a_half(self, seed):
        rep = pyramid_stability_demo(2, 64, 1e-3, seed, eta_factor=2.5)
        assert not rep.converged


class TestTrend:
    def test_small_width_cannot_fit(self):
        (row,) = depth_separation_trend(widths=(2,), grid_n=9, restarts=2, max_steps=5000)
        assert row.fit_rmse > 0.05

    def test_deterministic(self):
        kw = dict(widths=(3, 5), grid_n=7, restarts=2, max_steps=2000)
        assert depth_separation_trend(**kw) == depth_separation_trend(**kw)

    def test_widths_increasing(self):
        with pytest.raises(ValueError):
            depth_separation_trend(widths=(8, 4))
