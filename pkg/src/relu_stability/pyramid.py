"""The pyramid p(x) = relu(1 - |x|_1): exact in two hidden layers, costly in one.

The two-layer construction is a stable GD minimum for a fixed step size;
one-hidden-layer fits of the same data need a stability norm that keeps
growing as the fit improves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset
from .network import TwoLayerParams, forward_two_layer, loss, normalize_atoms, sharpness
from .rng import Stream
from .stability import WeightEval, stability_norm
from .training import Status, TrainConfig, init_shallow, train_gd

GRID_HALF_WIDTH = 1.5
KNOT_MARGIN = 1e-3


def pyramid_value(x) -> float | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(1.0 - np.abs(x).sum(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def build_two_layer_pyramid(d: int) -> TwoLayerParams:
    """relu(1 - sum_i (relu(x_i) + relu(-x_i))) with widths 2d and 1."""
    if d < 1:
        raise ValueError("d must be >= 1")
    eye = np.eye(d)
    W1 = np.concatenate([eye, -eye], axis=1)
    return TwoLayerParams(W1, np.zeros(2 * d), -np.ones((2 * d, 1)), np.ones(1), np.ones(1), 0.0)


def _knot_distance(xs: np.ndarray) -> np.ndarray:
    # distance to the kinks of the exact net: coordinate axes and the l1 sphere
    axes = np.abs(xs).min(axis=1)
    sphere = np.abs(np.abs(xs).sum(axis=1) - 1.0) / math.sqrt(xs.shape[1])
    return np.minimum(axes, sphere)


def jittered_grid(d: int, per_axis: int, seed: int, jitter: float = 0.3,
                  margin: float = KNOT_MARGIN) -> np.ndarray:
    """Uniform grid on [-1.5, 1.5]^d, each point moved by up to ``jitter``
    grid spacings; points landing within ``margin`` of a knot are redrawn."""
    if per_axis < 2:
        raise ValueError("need at least two points per axis")
    axis = np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, per_axis)
    h = axis[1] - axis[0]
    base = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    s = Stream(seed, stream=6)
    pts = base + jitter * h * (2.0 * s.uniform(base.shape) - 1.0)
    for _ in range(100):
        bad = _knot_distance(pts) < margin
        if not bad.any():
            break
        pts[bad] = base[bad] + jitter * h * (2.0 * s.uniform((int(bad.sum()), d)) - 1.0)
    return pts


def pyramid_dataset(d: int, per_axis: int, seed: int) -> Dataset:
    xs = jittered_grid(d, per_axis, seed)
    return Dataset(xs, pyramid_value(xs))


def probe_grid(d: int, per_axis: int = 41) -> np.ndarray:
    axis = np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, per_axis)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


@dataclass
class PyramidReport:
    d: int
    n_train: int
    perturb: float
    seed: int
    eta: float
    lambda_max: float
    status: Status
    steps: int
    final_loss: float
    probe_rmse: float
    converged: bool


def pyramid_stability_demo(d: int = 2, n_train: int = 64, perturb: float = 1e-3, seed: int = 0,
                           eta_factor: float = 1.0, max_steps: int = 200_000,
                           stop_loss: float = 1e-8) -> PyramidReport:
    """GD from a perturbed exact pyramid net at eta = eta_factor / lambda_max.

    ``n_train`` is rounded down to a full grid (per_axis = floor(n^(1/d))).
    Data and perturbation are both drawn from ``seed``.
    """
    per_axis = max(2, int(math.floor(n_train ** (1.0 / d) + 1e-9)))
    ds = pyramid_dataset(d, per_axis, seed)
    star = build_two_layer_pyramid(d)
    lam = sharpness(star, ds)
    eta = eta_factor / lam
    theta0 = star.flat() + perturb * Stream(seed, stream=7).normal(star.size)
    cfg = TrainConfig(eta=eta, max_steps=max_steps, stop_loss=stop_loss, seed=seed)
    res = train_gd(star.with_flat(theta0), ds, cfg)
    probe = probe_grid(d)
    if np.all(np.isfinite(res.params.flat())):
        rmse = float(np.sqrt(np.mean((forward_two_layer(res.params, probe) - pyramid_value(probe)) ** 2)))
    else:
        rmse = math.inf
    return PyramidReport(d, ds.n, perturb, seed, eta, lam, res.status, res.steps, res.final_loss,
                         rmse, res.status == Status.CONVERGED)


@dataclass
class TrendRow:
    k: int
    fit_rmse: float
    s_theta: float
    restart: int
    lambda_max: float


def two_layer_eta_star(d: int, ds: Dataset) -> float:
    """1 / lambda_max of the exact two-layer net on ``ds``."""
    return 1.0 / sharpness(build_two_layer_pyramid(d), ds)


def depth_separation_trend(d: int = 2, widths=(4, 8, 16, 32, 64), grid_n: int = 15, seed: int = 0,
                           restarts: int = 5, eta: float = 0.05, max_steps: int = 40_000,
                           init_scale: float = 1.0) -> list[TrendRow]:
    """Best-of-``restarts`` GD fits of one-hidden-layer nets to the pyramid.

    Every width sees the same jittered grid (``grid_n`` points per axis).
    Fits run for the full ``max_steps`` budget at step size ``eta``; the
    restart with the lowest training RMSE is kept.
    """
    widths = [int(k) for k in widths]
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be increasing")
    ds = pyramid_dataset(d, grid_n, seed)
    weights = WeightEval(ds)
    cfg = TrainConfig(eta=eta, max_steps=max_steps, stop_loss=0.0, diverge_loss=1e6)
    rows = []
    for k in widths:
        best = None
        for r in range(restarts):
            p0 = init_shallow(d, k, init_scale, seed=seed * 1000 + r)
            res = train_gd(p0, ds, replace(cfg, seed=r))
            if res.status == Status.DIVERGED:
                continue
            rmse = math.sqrt(2.0 * loss(res.params, ds))
            if best is None or rmse < best[0]:
                best = (rmse, r, res.params)
        if best is None:
            rows.append(TrendRow(k, math.inf, math.nan, -1, math.nan))
            continue
        rmse, r, p = best
        s = stability_norm(normalize_atoms(p), ds, weights=weights)
        rows.append(TrendRow(k, rmse, s, r, sharpness(p, ds)))
    return rows

