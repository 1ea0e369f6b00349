"""Closed-form weight functions and their Radon-domain densities.

Covers the two-point dataset {(1, 0), (-1, 0)}, isotropic data (with the
standard Gaussian as the worked case), the radial inversion in the plane and
a numeric line-integral check tying a density back to its weight function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

ALPHA = math.sqrt(2.0) / 4.0
TWO_POINTS = (np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
UNIT_TOL = 1e-9


class SingularPoint(ValueError):
    """Evaluation requested at a logarithmic singularity."""


class SingularOnLine(ValueError):
    pass


class QuadratureFailure(RuntimeError):
    def __init__(self, value, error, tol):
        super().__init__(f"quadrature error {error:.3g} exceeds tolerance {tol:.3g}")
        self.value, self.error, self.tol = value, error, tol


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction must be a unit vector, |v| = {np.linalg.norm(v)!r}")
    return v


# -- two-point dataset ----------------------------------------------------

def two_point_g(v, b: float) -> float:
    """alpha * relu(|v_1| - |b|) for the data {(1, 0), (-1, 0)}."""
    v = _unit(v)
    return ALPHA * max(abs(float(v[0])) - abs(float(b)), 0.0)


def two_point_rho(x) -> float:
    """Density whose line integrals reproduce :func:`two_point_g`.

    Negative in places even though every line integral is >= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = TWO_POINTS
    r1, r2, r0 = np.linalg.norm(x - x1), np.linalg.norm(x - x2), np.linalg.norm(x)
    if r1 == 0.0 or r2 == 0.0 or r0 == 0.0:
        raise SingularPoint(f"rho is singular at {x.tolist()}")
    return ALPHA / (2.0 * math.pi) * (math.log(r1) + math.log(r2) - 2.0 * math.log(r0))


two_point_rho.singular_points = (TWO_POINTS[0], TWO_POINTS[1], np.zeros(2))


# -- isotropic data -------------------------------------------------------

def gaussian_tail(b: float) -> float:
    """P(Z > b) for a standard normal Z."""
    return float(special.ndtr(-b))


def gaussian_tail_integral(b: float) -> float:
    """int_b^inf P(Z > z) dz = phi(b) - b Q(b)."""
    phi = math.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
    return phi - b * gaussian_tail(b)


def _tail_integral(M: Callable[[float], float], b: float) -> float:
    val, _ = integrate.quad(M, b, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def isotropic_g(M: Callable[[float], float], b: float,
                tail_integral: Callable[[float], float] | None = None) -> float:
    """Weight function for isotropic data with projected tail ``M``.

    ``M(b)`` is P(x^T v > b) for any unit v. The integral of the tail is
    taken from ``tail_integral`` when given, else by quadrature.
    """
    a = abs(float(b))
    m = float(M(a))
    i = float(tail_integral(a)) if tail_integral is not None else _tail_integral(M, a)
    if m <= 0.0 or i <= 0.0:
        return 0.0
    # M I sqrt((|b| + I/M)^2 + 1) rearranged to avoid dividing by a tiny M
    return i * math.hypot(m * a + i, m)


def gaussian_g(b: float) -> float:
    return isotropic_g(gaussian_tail, b, gaussian_tail_integral)


# -- radial inversion in the plane ---------------------------------------

def _derivative(g: Callable[[float], float], b: float) -> float:
    h = 1e-4 * (1.0 + abs(b))
    return (g(b + h) - g(b - h)) / (2.0 * h)


def radial_rho(g_profile: Callable[[float], float], r: float, quad_opts: dict | None = None,
               b_max: float = 60.0) -> float:
    """rho~(r) = -(1/pi) int_r^inf g'(b) / sqrt(b^2 - r^2) db.

    With b = r cosh t the kernel becomes dt, so the integral runs over
    t in [0, arccosh(b_max / r)], beyond which g' is taken to vanish.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    opts = {"epsabs": 0.0, "epsrel": 1e-9, "limit": 400}
    opts.update(quad_opts or {})
    tol = max(opts["epsabs"], 0.0)
    if r >= b_max:
        return 0.0
    t_max = math.acosh(b_max / r)
    val, err = integrate.quad(lambda t: _derivative(g_profile, r * math.cosh(t)), 0.0, t_max,
                              epsabs=opts["epsabs"], epsrel=opts["epsrel"], limit=opts["limit"])
    budget = max(tol, opts["epsrel"] * abs(val))
    if not math.isfinite(val) or err > 10.0 * budget:
        raise QuadratureFailure(-val / math.pi, err / math.pi, budget / math.pi)
    return -val / math.pi


@dataclass(frozen=True)
class RadialProfile:
    """Samples of a radial function with monotone cubic interpolation."""

    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        radii = np.array(self.radii, dtype=np.float64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if radii.shape != values.shape or radii.size < 2:
            raise ValueError("need matching radii and values, at least two samples")
        if np.any(np.diff(radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("profile values must be finite")
        radii.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_interp", PchipInterpolator(radii, values, extrapolate=False))

    @classmethod
    def from_g(cls, g_profile, radii, quad_opts=None) -> "RadialProfile":
        return cls(radii, [radial_rho(g_profile, float(r), quad_opts) for r in radii])

    def __call__(self, r):
        out = self._interp(np.asarray(r, dtype=np.float64))
        return float(out) if np.ndim(out) == 0 else out

    def at(self, x) -> float:
        """Value at a point of the plane."""
        return self(float(np.linalg.norm(x)))


# -- line integrals -------------------------------------------------------

def _chord(field, p0, direction, t):
    return field(p0 + t * direction)


def line_integral(field: Callable[[np.ndarray], float], v, b: float,
                  half_width: float | None = None, quad_opts: dict | None = None,
                  singular_points=None, exclusion: float = 1e-9,
                  log_singular: bool = True, tail_tol: float = 1e-6,
                  full_output: bool = False):
    """Integral of ``field`` over the line {x : x^T v = b} in the plane.

    The line is parametrized as b v + t v_perp with t in [-T, T]. Without a
    ``half_width`` T is doubled from 64 until the far-field estimate
    c / T per side (field ~ c / t^2) is below ``tail_tol``.
    Singular points (taken from ``field.singular_points`` by default) become
    quadrature breakpoints; one lying on the line is cut out by a symmetric
    window of size ``exclusion`` when ``log_singular``, and is an error
    otherwise. With ``full_output`` returns ``(value, tail_estimate)``.
    """
    v = _unit(v)
    perp = np.array([-v[1], v[0]])
    p0 = float(b) * v
    opts = {"epsabs": 1e-10, "epsrel": 1e-9, "limit": 500}
    opts.update(quad_opts or {})
    if singular_points is None:
        singular_points = getattr(field, "singular_points", ())

    feet, windows = [], []
    for s in singular_points:
        s = np.asarray(s, dtype=np.float64)
        t0 = float((s - p0) @ perp)
        dist = abs(float(s @ v) - float(b))
        if dist <= exclusion:
            if not log_singular:
                raise SingularOnLine(f"singular point {s.tolist()} lies on the line")
            windows.append((t0 - exclusion, t0 + exclusion))
        feet.append(t0)

    f = lambda t: _chord(field, p0, perp, t)

    def integrate_to(T):
        # geometric breakpoints keep each panel's far-field decay mild
        ladder = 2.0 ** np.arange(0, math.ceil(math.log2(T)))
        cuts = sorted({-T, T, 0.0, *ladder, *(-ladder),
                       *[t0 for t0 in feet if -T < t0 < T],
                       *[c for w in windows for c in w if -T < c < T]})
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if any(w[0] <= lo and hi <= w[1] for w in windows):
                continue
            val, _ = integrate.quad(f, lo, hi, epsabs=opts["epsabs"],
                                    epsrel=opts["epsrel"], limit=opts["limit"])
            total += val
        tail = (abs(f(T)) + abs(f(-T))) * T  # c/T on each side with c ~ |f(T)| T^2
        return total, tail

    if half_width is not None:
        value, tail = integrate_to(float(half_width))
    else:
        T = 64.0
        value, tail = integrate_to(T)
        while tail > tail_tol and T < 1e6:
            T *= 2.0
            value, tail = integrate_to(T)
    return (value, tail) if full_output else value


def disk_indicator(x) -> float:
    return 1.0 if float(np.dot(x, x)) <= 1.0 else 0.0
