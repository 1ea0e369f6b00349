import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from relu_stability import analytic
from relu_stability.analytic import (ALPHA, QuadratureFailure, RadialProfile, SingularOnLine,
                                     SingularPoint, disk_indicator, gaussian_g, gaussian_tail,
                                     gaussian_tail_integral, isotropic_g, line_integral,
                                     radial_rho, two_point_g, two_point_rho)
from relu_stability.dataset import Dataset
from relu_stability.stability import WeightEval

angles = st.floats(0.0, 2 * math.pi)


def unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


class TestTwoPoint:
    def test_center(self):
        assert two_point_g([1.0, 0.0], 0.0) == pytest.approx(math.sqrt(2) / 4, abs=1e-15)

    @settings(max_examples=100)
    @given(angles, st.floats(-2.0, 2.0))
    def test_matches_empirical(self, theta, b):
        w = WeightEval(Dataset([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]))
        v = unit(theta)
        assert two_point_g(v, b) == pytest.approx(w.g(v, b), abs=1e-12)

    @given(angles, st.floats(1.0, 5.0))
    def test_clamped(self, theta, factor):
        v = unit(theta)
        b = abs(v[0]) * factor + (factor - 1.0)  # never rounds below |v_1|
        assert two_point_g(v, b) == 0.0
        assert two_point_g(v, -b) == 0.0

    def test_rho_value(self):
        assert two_point_rho([0.0, 2.0]) == pytest.approx(ALPHA / (2 * math.pi) * math.log(5 / 4),
                                                          rel=1e-14)

    @pytest.mark.parametrize("x", [(1.0, 0.0), (-1.0, 0.0), (0.0, 0.0)])
    def test_rho_singular(self, x):
        with pytest.raises(SingularPoint):
            two_point_rho(x)

    def test_rho_changes_sign(self):
        assert two_point_rho([0.0, 0.5]) > 0 > two_point_rho([2.0, 0.0])


class TestGaussian:
    def test_tail_integral_at_zero(self):
        assert gaussian_tail_integral(0.0) == pytest.approx(0.3989422804, abs=1e-10)

    @pytest.mark.parametrize("b", [-1.0, 0.5, 3.0])
    def test_tail_integral_quadrature(self, b):
        ref, _ = integrate.quad(lambda z: special.ndtr(-z), b, np.inf, epsabs=1e-13)
        assert gaussian_tail_integral(b) == pytest.approx(ref, abs=1e-10)

    def test_g_at_zero(self):
        expect = 0.5 * 0.3989422804014327 * math.sqrt(0.7978845608028654 ** 2 + 1)
        assert gaussian_g(0.0) == pytest.approx(expect, rel=1e-12)
        assert gaussian_g(0.0) == pytest.approx(0.25518, abs=1e-5)

    @pytest.mark.parametrize("b", [0.0, 0.7, 2.5])
    def test_quadrature_path_agrees(self, b):
        assert isotropic_g(gaussian_tail, b) == pytest.approx(gaussian_g(b), rel=1e-9)

    def test_vanishes_far_out(self):
        assert gaussian_g(40.0) == 0.0
        assert gaussian_g(-40.0) == 0.0
        assert gaussian_g(8.0) < 1e-15

    @given(st.floats(-6.0, 6.0))
    def test_even_and_nonnegative(self, b):
        assert gaussian_g(b) == gaussian_g(-b) >= 0.0

    def test_isotropic_sample_limit(self):
        # empirical g of many standard-normal points approaches the closed form
        xs = np.random.default_rng(0).normal(size=(200_000, 2))
        w = WeightEval(Dataset(xs, np.zeros(len(xs))))
        for b in (0.0, 0.5, 1.0):
            assert w.g([1.0, 0.0], b) == pytest.approx(gaussian_g(b), rel=2e-2)


class TestRadial:
    def test_positive_decreasing(self):
        rs = np.geomspace(1e-2, 10.0, 40)
        vals = np.array([radial_rho(gaussian_g, r) for r in rs])
        assert np.all(vals > 0)
        assert np.all(np.diff(vals) < 0)

    def test_log_growth_at_origin(self):
        ratios = [radial_rho(gaussian_g, r) / math.log(1 / r) for r in np.geomspace(1e-4, 1e-2, 5)]
        assert max(ratios) <= 2 * ratios[-1]

    def test_far_decay(self):
        vals = [radial_rho(gaussian_g, r) * r for r in np.geomspace(10.0, 1e3, 5)]
        assert all(np.isfinite(vals)) and max(vals) <= 1e-12

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            radial_rho(gaussian_g, 0.0)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_quadrature_failure(self):
        with pytest.raises(QuadratureFailure):
            radial_rho(lambda b: math.sin(1e4 * b), 0.5, quad_opts={"limit": 3})

    def test_profile_interpolates(self):
        prof = RadialProfile.from_g(gaussian_g, np.geomspace(0.05, 3.0, 30))
        r = 0.7
        assert prof(r) == pytest.approx(radial_rho(gaussian_g, r), rel=1e-3)
        assert prof.at([0.0, 0.7]) == prof(0.7)

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            RadialProfile([1.0, 0.5], [0.0, 0.0])


class TestLineIntegral:
    def test_chord(self):
        assert line_integral(disk_indicator, [1.0, 0.0], 0.0, half_width=2.0) == pytest.approx(2.0, abs=1e-6)

    def test_vertical_line_cancels(self):
        assert abs(line_integral(two_point_rho, [0.0, 1.0], 0.3)) <= 2e-2

    def test_matches_g(self):
        expect = ALPHA * 0.6
        assert line_integral(two_point_rho, [1.0, 0.0], 0.4) == pytest.approx(expect, rel=2e-2)

    def test_through_singularity(self):
        assert line_integral(two_point_rho, [1.0, 0.0], 0.0) == pytest.approx(ALPHA, rel=2e-2)

    def test_singular_on_line_error(self):
        with pytest.raises(SingularOnLine):
            line_integral(two_point_rho, [1.0, 0.0], 1.0, log_singular=False)

    def test_tail_estimate_reported(self):
        _, tail = line_integral(two_point_rho, [0.6, 0.8], 0.2, full_output=True)
        assert tail <= 1e-6

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            line_integral(two_point_rho, [1.0, 1.0], 0.0)


def test_alpha():
    assert analytic.ALPHA == math.sqrt(2) / 4
