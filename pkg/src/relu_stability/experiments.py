"""Experiment drivers: synthetic sweep, MNIST, init-scale study, analytic
tables and the pyramid demo.

Each ``run_*`` returns a :class:`RunOutput`; when ``out_dir`` is given the
report and a JSON manifest are also written there.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analytic, pyramid
from .dataset import (Dataset, binary_subset, gen_gaussian_regression, load_idx_images,
                      load_idx_labels)
from .network import predict
from .reporting import config_hash, emit_report, format_float, manifest, report_row
from .stability import TOL_EOS, stability_report
from .training import SGD_PATIENCE_EPOCHS, Status, TrainConfig, init_shallow, train

OUT_ENV = "RELU_STABILITY_OUT"
FLATTEST_AUTO_MAX_PARAMS = 1000


def desk_etas() -> tuple:
    return tuple(float(e) for e in np.geomspace(1e-3, 1e-1, 5))


@dataclass(frozen=True)
class SweepConfig:
    """Desk defaults: n=30, d=5, k=20, five half-decade step sizes, five seeds.

    ``init_scale`` 2 is the largest of 1, 2, 3, ... at which no step size in
    the grid diverges on the desk data.
    """
    n: int = 30
    d: int = 5
    k: int = 20
    etas: tuple = field(default_factory=desk_etas)
    seeds: tuple = (0, 1, 2, 3, 4)
    data_seed: int = 0
    batch: int = 0
    init_scale: float = 2.0
    max_steps: int = 1_000_000
    stop_loss: float = 1e-8
    flattest: str = "auto"
    extra_probes: int = 256

    @classmethod
    def full_scale(cls) -> "SweepConfig":
        return cls(n=100, d=20, k=40, etas=tuple(float(e) for e in np.geomspace(1e-4, 1e-1, 7)),
                   seeds=(0, 1, 2))


@dataclass(frozen=True)
class MnistConfig:
    images: str = ""
    labels: str = ""
    class_pos: int = 0
    class_neg: int = 1
    n_train: int = 128
    n_val: int = 1000
    k: int = 50
    batch: int = 16
    etas: tuple = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    seeds: tuple = (0,)
    data_seed: int = 0
    init_scale: float = 1.0
    max_steps: int = 500_000
    stop_loss: float = 1e-8
    flattest: str = "auto"
    extra_probes: int = 256


def init_scale_etas() -> tuple:
    return tuple(float(e) for e in np.geomspace(1e-3, 0.2, 9))


@dataclass(frozen=True)
class InitScaleConfig:
    scales: tuple = (1.0, 10.0)
    n: int = 30
    d: int = 5
    k: int = 20
    etas: tuple = field(default_factory=init_scale_etas)
    seeds: tuple = (0, 1, 2)
    data_seed: int = 0
    max_steps: int = 1_000_000
    stop_loss: float = 1e-8
    tol_eos: float = TOL_EOS


@dataclass(frozen=True)
class AnalyticConfig:
    b_max: float = 4.0
    b_points: int = 81
    r_min: float = 1e-2
    r_max: float = 10.0
    r_points: int = 40


@dataclass(frozen=True)
class PyramidConfig:
    d: int = 2
    n_train: int = 64
    perturb: float = 1e-3
    seeds: tuple = tuple(range(10))
    eta_factors: tuple = (1.0, 2.5)
    widths: tuple = (4, 8, 16, 32, 64)
    grid_n: int = 15
    restarts: int = 5
    trend_seed: int = 0


@dataclass
class RunOutput:
    rows: list
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def resolve_out_dir(out: str | None) -> Path | None:
    """Explicit ``out`` wins, then the environment variable, else nothing."""
    out = out or os.environ.get(OUT_ENV)
    return Path(out) if out else None


def _write(out_dir: Path | None, name: str, payload: bytes, files: list):
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_bytes(payload)
    files.append(str(path))


def _flattest_on(mode: str, n_params: int) -> bool:
    if mode not in ("on", "off", "auto"):
        raise ValueError(f"flattest must be on/off/auto, got {mode!r}")
    return mode == "on" or (mode == "auto" and n_params <= FLATTEST_AUTO_MAX_PARAMS)


def _run_cell(ds: Dataset, k: int, eta: float, seed: int, init_scale: float, cfg, flattest: str,
              extra_probes: int):
    """Train one network and build its report; exceptions become a failed row."""
    tcfg = TrainConfig(eta=eta, batch=cfg.batch, max_steps=cfg.max_steps, stop_loss=cfg.stop_loss,
                       seed=seed, init_scale=init_scale,
                       stop_patience_epochs=1 if cfg.batch == 0 else SGD_PATIENCE_EPOCHS)
    res = train(init_shallow(ds.d, k, init_scale, seed), ds, tcfg)
    rep = None
    if res.status != Status.DIVERGED:
        rep = stability_report(res.params, ds, eta, flattest=_flattest_on(flattest, res.params.size),
                               extra_probes=extra_probes, seed=seed)
    return res, rep


def _sweep_rows(ds, cfg, k, etas, seeds, init_scale, flattest, extra_probes, cfg_hash,
                val: Dataset | None = None):
    rows, cells = [], []
    for i, eta in enumerate(etas):
        for seed in seeds:
            try:
                res, rep = _run_cell(ds, k, float(eta), int(seed), init_scale, cfg, flattest,
                                     extra_probes)
            except Exception as exc:  # recorded, never aborts the sweep
                rows.append({"run_id": f"{cfg_hash}:{i}:{seed}", "eta": float(eta),
                             "two_over_eta": 2.0 / float(eta), "seed": int(seed),
                             "init_scale": init_scale, "batch": cfg.batch,
                             "status": f"Failed:{type(exc).__name__}"})
                cells.append(None)
                continue
            acc = None
            if val is not None and res.status != Status.DIVERGED:
                acc = float(np.mean(np.where(predict(res.params, val.xs) > 0, 1.0, -1.0) == val.ys))
            rows.append(report_row(cfg_hash, i, float(eta), int(seed), init_scale, cfg.batch, res,
                                   rep, acc))
            cells.append((res, rep))
    return rows, cells


def run_synthetic_sweep(cfg: SweepConfig = SweepConfig(), out_dir=None, fmt: str = "csv") -> RunOutput:
    ds = gen_gaussian_regression(cfg.n, cfg.d, cfg.data_seed)
    h = config_hash(cfg)
    rows, cells = _sweep_rows(ds, cfg, cfg.k, cfg.etas, cfg.seeds, cfg.init_scale, cfg.flattest,
                              cfg.extra_probes, h)
    out = RunOutput(rows, summary={"config_hash": h})
    out.summary["cells"] = cells
    out_dir = resolve_out_dir(out_dir)
    _write(out_dir, f"sweep.{fmt}", emit_report(rows, fmt), out.files)
    _write(out_dir, "sweep_manifest.json", manifest("sweep", cfg, {"rows": len(rows)}), out.files)
    return out


class DataError(Exception):
    """Input files missing or malformed."""


def load_mnist(cfg: MnistConfig):
    """Read and parse both IDX files before any training happens."""
    try:
        images = load_idx_images(Path(cfg.images).read_bytes())
        labels = load_idx_labels(Path(cfg.labels).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read MNIST file: {exc}") from exc
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return binary_subset(images, labels, cfg.class_pos, cfg.class_neg, cfg.n_train, cfg.n_val,
                         cfg.data_seed)


def run_mnist(cfg: MnistConfig, out_dir=None, fmt: str = "csv") -> RunOutput:
    train_ds, val_ds = load_mnist(cfg)
    public = replace(cfg, images=os.path.basename(cfg.images), labels=os.path.basename(cfg.labels))
    h = config_hash(public)
    rows, cells = _sweep_rows(train_ds, cfg, cfg.k, cfg.etas, cfg.seeds, cfg.init_scale,
                              cfg.flattest, cfg.extra_probes, h, val=val_ds)
    out = RunOutput(rows, summary={"config_hash": h, "cells": cells})
    out_dir = resolve_out_dir(out_dir)
    _write(out_dir, f"mnist.{fmt}", emit_report(rows, fmt), out.files)
    _write(out_dir, "mnist_manifest.json", manifest("mnist", public, {"rows": len(rows)}), out.files)
    return out


def detect_crossover(etas, median_lambdas, tol_eos: float = TOL_EOS):
    """Index of the first step size whose median sharpness reaches
    (1 - tol_eos) * 2 / eta; None for fewer than two step sizes or no touch."""
    if len(etas) < 2:
        return None
    for i, (eta, lam) in enumerate(zip(etas, median_lambdas)):
        if lam is not None and math.isfinite(lam) and lam >= (1.0 - tol_eos) * 2.0 / eta:
            return i
    return None


def _median(vals):
    return float(np.median(vals)) if vals else None


def run_init_scale(cfg: InitScaleConfig = InitScaleConfig(), out_dir=None,
                   fmt: str = "csv") -> RunOutput:
    if len(cfg.scales) == 0:
        raise ValueError("scales must be nonempty")
    ds = gen_gaussian_regression(cfg.n, cfg.d, cfg.data_seed)
    h = config_hash(cfg)
    sweep_like = SweepConfig(n=cfg.n, d=cfg.d, k=cfg.k, etas=cfg.etas, seeds=cfg.seeds,
                             max_steps=cfg.max_steps, stop_loss=cfg.stop_loss, flattest="off")
    rows, tables = [], []
    for j, scale in enumerate(cfg.scales):
        sh = f"{h}-s{j}"
        srows, _ = _sweep_rows(ds, sweep_like, cfg.k, cfg.etas, cfg.seeds, float(scale), "off",
                               sweep_like.extra_probes, sh)
        rows.extend(srows)
        med = []
        for i, eta in enumerate(cfg.etas):
            lams = [r["lambda_max"] for r in srows
                    if r["run_id"].split(":")[1] == str(i) and r["status"] == Status.CONVERGED.value]
            med.append(_median(lams))
        cross = detect_crossover(cfg.etas, med, cfg.tol_eos)
        tables.append({
            "init_scale": float(scale),
            "etas": [float(e) for e in cfg.etas],
            "median_lambda_max": med,
            "two_over_eta": [2.0 / e for e in cfg.etas],
            "crossover_index": cross,
            "crossover_eta": None if cross is None else float(cfg.etas[cross]),
        })
    out = RunOutput(rows, summary={"config_hash": h, "tables": tables})
    out_dir = resolve_out_dir(out_dir)
    _write(out_dir, f"init_scale.{fmt}", emit_report(rows, fmt), out.files)
    _write(out_dir, "init_scale_manifest.json",
           manifest("init-scale", cfg, {"rows": len(rows), "tables": tables}), out.files)
    return out


def emit_table(columns, rows) -> bytes:
    """Plain CSV for auxiliary tables, floats at 17 significant digits."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_float(v) if isinstance(v, float) else str(v) for v in row))
    return ("\n".join(lines) + "\n").encode()


def run_analytic_weights(cfg: AnalyticConfig = AnalyticConfig(), out_dir=None) -> RunOutput:
    bs = np.linspace(0.0, cfg.b_max, cfg.b_points)
    g_rows = [(float(b), analytic.gaussian_g(float(b)), analytic.two_point_g([1.0, 0.0], float(b)))
              for b in bs]
    rs = np.geomspace(cfg.r_min, cfg.r_max, cfg.r_points)
    rho_rows = [(float(r), analytic.radial_rho(analytic.gaussian_g, float(r))) for r in rs]
    out = RunOutput(g_rows + rho_rows)
    out_dir = resolve_out_dir(out_dir)
    _write(out_dir, "weights_g.csv", emit_table(("b", "gaussian_g", "two_point_g_v1"), g_rows),
           out.files)
    _write(out_dir, "weights_rho.csv", emit_table(("r", "gaussian_rho"), rho_rows), out.files)
    _write(out_dir, "weights_manifest.json", manifest("analytic-weights", cfg), out.files)
    out.summary = {"g": g_rows, "rho": rho_rows}
    return out


def run_pyramid_demo(cfg: PyramidConfig = PyramidConfig(), out_dir=None) -> RunOutput:
    demo = [pyramid.pyramid_stability_demo(cfg.d, cfg.n_train, cfg.perturb, int(s), eta_factor=f)
            for f in cfg.eta_factors for s in cfg.seeds]
    trend = pyramid.depth_separation_trend(cfg.d, cfg.widths, cfg.grid_n, cfg.trend_seed,
                                           cfg.restarts)
    ds = pyramid.pyramid_dataset(cfg.d, cfg.grid_n, cfg.trend_seed)
    eta_star = pyramid.two_layer_eta_star(cfg.d, ds)
    demo_rows = [(r.eta * r.lambda_max, r.seed, r.eta, r.lambda_max, r.status.value, r.steps,
                  float(r.final_loss), r.probe_rmse) for r in demo]
    trend_rows = [(t.k, t.fit_rmse, t.s_theta, t.restart, t.lambda_max) for t in trend]
    out = RunOutput(demo_rows, summary={
        "demo": demo, "trend": trend, "eta_star": eta_star,
        "threshold": 1.0 / eta_star - 0.5,
    })
    out_dir = resolve_out_dir(out_dir)
    _write(out_dir, "pyramid_stability.csv",
           emit_table(("eta_factor", "seed", "eta", "lambda_max", "status", "steps", "final_loss",
                       "probe_rmse"), demo_rows), out.files)
    _write(out_dir, "pyramid_trend.csv",
           emit_table(("k", "fit_rmse", "s_theta", "restart", "lambda_max"), trend_rows), out.files)
    _write(out_dir, "pyramid_manifest.json",
           manifest("pyramid-demo", cfg, {"eta_star": eta_star,
                                          "threshold": 1.0 / eta_star - 0.5}), out.files)
    return out
