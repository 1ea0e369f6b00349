"""The data-dependent weight g(v, b) for two toy input distributions, and a
density rho whose line integrals reproduce it.
"""
import numpy as np

from relu_stability.analytic import (ALPHA, gaussian_g, line_integral, radial_rho, two_point_g,
                                     two_point_rho)
from relu_stability.dataset import Dataset
from relu_stability.stability import WeightEval

# Two points (1, 0) and (-1, 0): closed form against the empirical definition.
emp = WeightEval(Dataset([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]))
for theta in (0.0, 0.6, 1.2):
    v = np.array([np.cos(theta), np.sin(theta)])
    row = [f"{two_point_g(v, b):.4f}/{emp.g(v, b):.4f}" for b in (-0.5, 0.0, 0.3)]
    print(f"theta={theta:.1f}  g closed/empirical at b=-0.5,0,0.3:", *row)

# rho is negative near the data points yet every line integral is >= 0.
print("\nrho at (0, 0.5), (2, 0):", two_point_rho([0.0, 0.5]), two_point_rho([2.0, 0.0]))
for b in (0.0, 0.4, 0.8):
    v = np.array([1.0, 0.0])
    print(f"line x1={b}: integral {line_integral(two_point_rho, v, b):.5f}  g {ALPHA * (1 - b):.5f}")

# Standard Gaussian inputs: g decays like a Gaussian tail, rho is radial.
print("\n   b   gaussian_g")
for b in (0.0, 0.5, 1.0, 2.0, 3.0):
    print(f"{b:4.1f}  {gaussian_g(b):.6f}")
print("\n     r   rho(r)    rho/log(1/r)")
for r in (1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0):
    rho = radial_rho(gaussian_g, r)
    ratio = rho / np.log(1 / r) if r < 1 else float("nan")
    print(f"{r:6.3f}  {rho:.5f}  {ratio:.4f}")
