"""Deterministic full-batch GD and mini-batch SGD."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .network import ShallowParams, TwoLayerParams, grad_loss, shallow_from_flat
from .rng import Stream


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    MAX_STEPS = "MaxSteps"


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    batch: int = 0  # 0 means full-batch GD
    max_steps: int = 500_000
    stop_loss: float = 1e-8
    stop_patience_epochs: int = 1
    diverge_loss: float = 1e6
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.batch < 0:
            raise ValueError("batch must be >= 0")


SGD_PATIENCE_EPOCHS = 2000


@dataclass
class TrainResult:
    params: object
    status: Status
    steps: int
    final_loss: float
    loss_trace: list = field(default_factory=list)  # (step, loss) pairs


def init_shallow(d: int, k: int, scale: float = 1.0, seed: int = 0) -> ShallowParams:
    """He-style normal init times ``scale``.

    W1 and b1 entries ~ N(0, 2/d), w2 ~ N(0, 2/k), b2 = 0, all drawn in that
    order from stream 2 of ``seed``.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    s = Stream(seed, stream=2)
    W1 = s.normal((k, d)).T * math.sqrt(2.0 / d)
    b1 = s.normal(k) * math.sqrt(2.0 / d)
    w2 = s.normal(k) * math.sqrt(2.0 / max(k, 1))
    return ShallowParams(scale * W1, scale * b1, scale * w2, 0.0)


def init_two_layer(d: int, k1: int, k2: int, scale: float = 1.0, seed: int = 0) -> TwoLayerParams:
    s = Stream(seed, stream=3)
    W1 = s.normal((k1, d)).T * math.sqrt(2.0 / d)
    b1 = s.normal(k1) * math.sqrt(2.0 / d)
    W2 = s.normal((k2, k1)).T * math.sqrt(2.0 / k1)
    b2 = s.normal(k2) * math.sqrt(2.0 / k1)
    w3 = s.normal(k2) * math.sqrt(2.0 / k2)
    return TwoLayerParams(scale * W1, scale * b1, scale * W2, scale * b2, scale * w3, 0.0)


class _ShallowKernel:
    """Loss and gradient on flat parameter vectors without object churn."""

    def __init__(self, d: int, k: int):
        self.d, self.k = d, k
        self.dk = d * k

    def __call__(self, theta, xs, ys):
        d, k, dk = self.d, self.k, self.dk
        W1 = theta[:dk].reshape(k, d)
        b1 = theta[dk:dk + k]
        w2 = theta[dk + k:dk + 2 * k]
        pre = xs @ W1.T + b1
        act = pre > 0.0
        h = pre * act
        r = h @ w2 + theta[-1] - ys
        m = xs.shape[0]
        delta = (r[:, None] * act) * w2
        g = np.empty_like(theta)
        g[:dk] = (delta.T @ xs).reshape(-1)
        g[dk:dk + k] = delta.sum(axis=0)
        g[dk + k:dk + 2 * k] = h.T @ r
        g[-1] = r.sum()
        g /= m
        return 0.5 * float(r @ r) / m, g


class _GenericKernel:
    def __init__(self, template):
        self.template = template

    def __call__(self, theta, xs, ys):
        p = self.template.with_flat(theta)
        ds = Dataset(xs, ys)
        from .network import loss
        return loss(p, ds), grad_loss(p, ds)


def _kernel_for(p):
    if isinstance(p, ShallowParams):
        return _ShallowKernel(p.d, p.k), lambda th: shallow_from_flat(p.d, p.k, th)
    return _GenericKernel(p), p.with_flat


def _full_loss(kernel, theta, xs, ys) -> float:
    return kernel(theta, xs, ys)[0]


def train_gd(p0, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """theta <- theta - eta grad L(theta) until interpolation, blow-up or budget."""
    if cfg.batch not in (0, ds.n):
        raise ValueError("train_gd needs batch = 0 (full batch)")
    kernel, rebuild = _kernel_for(p0)
    theta = p0.flat().copy()
    xs, ys = ds.xs, ds.ys
    every = max(1, math.ceil(cfg.max_steps / 1000))
    trace = []
    status = Status.MAX_STEPS
    L = math.inf
    step = 0
    for step in range(cfg.max_steps + 1):
        L, g = kernel(theta, xs, ys)
        if step % every == 0:
            trace.append((step, L))
        if not math.isfinite(L) or L > cfg.diverge_loss or not np.all(np.isfinite(g)):
            status = Status.DIVERGED
            break
        if L <= cfg.stop_loss:
            status = Status.CONVERGED
            break
        if step == cfg.max_steps:
            break
        theta -= cfg.eta * g
    return TrainResult(rebuild(theta), status, step, L, trace)


def train_sgd(p0, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Mini-batch SGD, batches of distinct indices drawn independently each step.

    Convergence needs the full-data loss <= stop_loss at the start of
    ``stop_patience_epochs`` consecutive epochs of ceil(n / B) steps.
    """
    if not 1 <= cfg.batch <= ds.n:
        raise ValueError("train_sgd needs 1 <= batch <= n")
    kernel, rebuild = _kernel_for(p0)
    theta = p0.flat().copy()
    xs, ys = ds.xs, ds.ys
    n, B = ds.n, cfg.batch
    per_epoch = math.ceil(n / B)
    stream = Stream(cfg.seed, stream=4)
    every = max(1, math.ceil(cfg.max_steps / 1000))
    trace = []
    status = Status.MAX_STEPS
    streak = 0
    step = 0
    L = math.inf
    full = B == n
    while True:
        if step % per_epoch == 0:
            L = _full_loss(kernel, theta, xs, ys)
            if not math.isfinite(L) or L > cfg.diverge_loss:
                status = Status.DIVERGED
                break
            streak = streak + 1 if L <= cfg.stop_loss else 0
            if streak >= cfg.stop_patience_epochs:
                status = Status.CONVERGED
                break
        if step >= cfg.max_steps:
            L = _full_loss(kernel, theta, xs, ys)
            break
        if full:
            _, g = kernel(theta, xs, ys)
        else:
            idx = stream.choice(n, B)
            _, g = kernel(theta, xs[idx], ys[idx])
        if step % every == 0:
            trace.append((step, L))
        theta -= cfg.eta * g
        if not np.all(np.isfinite(theta)):
            status = Status.DIVERGED
            L = math.inf
            break
        step += 1
    return TrainResult(rebuild(theta), status, step, L, trace)


def train(p0, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    if cfg.batch == 0:
        return train_gd(p0, ds, cfg)
    return train_sgd(p0, ds, cfg)


@dataclass
class SweepRecord:
    eta: float
    seed: int
    result: TrainResult
    report: object


def sweep(ds: Dataset, etas, seeds, template: TrainConfig, k: int,
          report_fn=None, init_fn=None) -> list[SweepRecord]:
    """Train one network per (eta, seed), in (eta, seed) order.

    ``init_fn(d, k, scale, seed)`` builds the start point (default
    :func:`init_shallow`); ``report_fn(params, ds, eta, result)`` computes the
    per-run stability report.
    """
    if len(etas) == 0:
        raise ValueError("etas must be nonempty")
    init_fn = init_fn or init_shallow
    records = []
    for eta in etas:
        for seed in seeds:
            cfg = replace(template, eta=float(eta), seed=int(seed))
            p0 = init_fn(ds.d, k, cfg.init_scale, cfg.seed)
            res = train(p0, ds, cfg)
            rep = report_fn(res.params, ds, cfg.eta, res) if report_fn else None
            records.append(SweepRecord(float(eta), int(seed), res, rep))
    return records
