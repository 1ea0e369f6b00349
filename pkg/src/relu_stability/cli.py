"""Command-line driver.

Configuration is layered: dataclass defaults, then an optional ``--config``
JSON file, then explicit flags. The output directory may also come from the
``RELU_STABILITY_OUT`` environment variable. Without an output directory the
report goes to stdout.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

from . import __version__, acceptance
from .dataset import IdxError, InsufficientSamples
from .experiments import (AnalyticConfig, DataError, InitScaleConfig, MnistConfig, PyramidConfig,
                          SweepConfig, emit_table, resolve_out_dir, run_analytic_weights,
                          run_init_scale, run_mnist, run_pyramid_demo, run_synthetic_sweep)
from .reporting import FORMATS, emit_report

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple:
    """Comma list of ints; ``a-b`` expands to the inclusive range."""
    out = []
    try:
        for tok in filter(None, (t.strip() for t in text.split(","))):
            if "-" in tok[1:]:
                lo, hi = tok.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(tok))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    return tuple(out)


# flag dest -> config field, per config class
_FIELDS = {
    "etas": "etas", "seeds": "seeds", "n": "n", "d": "d", "k": "k", "batch": "batch",
    "init_scale": "init_scale", "max_steps": "max_steps", "stop_loss": "stop_loss",
    "flattest": "flattest", "mnist_images": "images", "mnist_labels": "labels",
}


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return obj


def build_config(cls, args, overrides: dict | None = None):
    """Defaults < JSON file < flags. Unknown keys are a config error."""
    names = {f.name for f in dataclasses.fields(cls)}
    values = _load_json(getattr(args, "config", None))
    values.pop("out", None)
    values.pop("format", None)
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    for dest, name in _FIELDS.items():
        val = getattr(args, dest, None)
        if val is not None and name in names:
            values[name] = val
    values.update(overrides or {})
    for key in ("etas", "seeds", "scales"):
        if key in values:
            values[key] = tuple(values[key])
    try:
        cfg = cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg):
    def positive_int(name):
        v = getattr(cfg, name, None)
        if v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")

    for name in ("n", "d", "k", "max_steps", "n_train", "n_val"):
        positive_int(name)
    if getattr(cfg, "batch", 0) < 0:
        raise ConfigError("batch must be >= 0")
    for eta in getattr(cfg, "etas", ()):
        if not (math.isfinite(eta) and eta > 0):
            raise ConfigError(f"step sizes must be positive and finite, got {eta!r}")
    for s in getattr(cfg, "scales", ()):
        if not (math.isfinite(s) and s > 0):
            raise ConfigError(f"init scales must be positive, got {s!r}")
    scale = getattr(cfg, "init_scale", 1.0)
    if not (math.isfinite(scale) and scale > 0):
        raise ConfigError(f"init scale must be positive, got {scale!r}")
    if getattr(cfg, "stop_loss", 0.0) < 0:
        raise ConfigError("stop_loss must be >= 0")
    if getattr(cfg, "flattest", "auto") not in ("on", "off", "auto"):
        raise ConfigError(f"flattest must be on, off or auto, got {cfg.flattest!r}")
    if isinstance(cfg, MnistConfig) and not (cfg.images and cfg.labels):
        raise ConfigError("mnist needs --mnist-images and --mnist-labels")


def _emit(out, report: bytes, args):
    if out.files:
        for f in out.files:
            print(f, file=sys.stderr)
    else:
        sys.stdout.buffer.write(report)
        sys.stdout.flush()


def cmd_train(args):
    base = build_config(SweepConfig, args)
    eta = args.eta if args.eta is not None else base.etas[0] if base.etas else None
    if eta is None or not (math.isfinite(eta) and eta > 0):
        raise ConfigError(f"train needs a positive --eta, got {eta!r}")
    seed = base.seeds[0] if base.seeds else 0
    cfg = dataclasses.replace(base, etas=(eta,), seeds=(seed,))
    out = run_synthetic_sweep(cfg, args.out, args.format)
    _emit(out, emit_report(out.rows, args.format), args)


def cmd_sweep(args):
    cfg = build_config(SweepConfig, args)
    out = run_synthetic_sweep(cfg, args.out, args.format)
    _emit(out, emit_report(out.rows, args.format), args)


def cmd_mnist(args):
    cfg = build_config(MnistConfig, args)
    out = run_mnist(cfg, args.out, args.format)
    _emit(out, emit_report(out.rows, args.format), args)


def cmd_init_scale(args):
    extra = {"scales": args.scales} if args.scales is not None else {}
    cfg = build_config(InitScaleConfig, args, extra)
    out = run_init_scale(cfg, args.out, args.format)
    _emit(out, emit_report(out.rows, args.format), args)
    for t in out.summary["tables"]:
        print(f"init_scale {t['init_scale']:g}: crossover eta {t['crossover_eta']}", file=sys.stderr)


def cmd_analytic(args):
    cfg = build_config(AnalyticConfig, args)
    out = run_analytic_weights(cfg, args.out)
    _emit(out, emit_table(("b", "gaussian_g", "two_point_g_v1"), out.summary["g"])
          + emit_table(("r", "gaussian_rho"), out.summary["rho"]), args)


def cmd_pyramid(args):
    cfg = build_config(PyramidConfig, args)
    out = run_pyramid_demo(cfg, args.out)
    trend = [(t.k, t.fit_rmse, t.s_theta, t.restart, t.lambda_max) for t in out.summary["trend"]]
    _emit(out, emit_table(("eta_factor", "seed", "eta", "lambda_max", "status", "steps",
                           "final_loss", "probe_rmse"), out.rows)
          + emit_table(("k", "fit_rmse", "s_theta", "restart", "lambda_max"), trend), args)


def cmd_selftest(args):
    only = set(args.only) if args.only else None
    results = acceptance.run_all(only, args.mnist_images, args.mnist_labels)
    failed = [r for r in results if r.passed is False]
    skipped = [r for r in results if r.passed is None]
    print(f"{len(results) - len(failed) - len(skipped)} passed, {len(failed)} failed, "
          f"{len(skipped)} skipped")
    return EXIT_FAIL if failed else EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relu-stability",
                                description="Sharpness and stability norms of shallow ReLU nets.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with config fields; flags take precedence")
    common.add_argument("--out", help="output directory (default: $RELU_STABILITY_OUT, else stdout)")
    common.add_argument("--format", choices=FORMATS, default="csv")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--etas", type=_floats)
    run.add_argument("--seeds", type=_ints)
    run.add_argument("--n", type=int)
    run.add_argument("--d", type=int)
    run.add_argument("--k", type=int)
    run.add_argument("--batch", type=int)
    run.add_argument("--max-steps", type=int)
    run.add_argument("--stop-loss", type=float)
    run.add_argument("--flattest", choices=("on", "off", "auto"))

    s = sub.add_parser("train", parents=[common, run], help="one training run and its report")
    s.add_argument("--eta", type=float)
    s.add_argument("--init-scale", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common, run], help="synthetic step-size sweep")
    s.add_argument("--init-scale", type=float)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("mnist", parents=[common, run], help="binary MNIST subset with SGD")
    s.add_argument("--init-scale", type=float)
    s.add_argument("--mnist-images")
    s.add_argument("--mnist-labels")
    s.set_defaults(func=cmd_mnist)

    s = sub.add_parser("init-scale", parents=[common, run], help="sharpness vs step size per init scale")
    s.add_argument("--init-scale", dest="scales", type=_floats, help="comma-separated scales")
    s.set_defaults(func=cmd_init_scale)

    s = sub.add_parser("analytic-weights", parents=[common], help="closed-form g and rho tables")
    s.set_defaults(func=cmd_analytic)

    s = sub.add_parser("pyramid-demo", parents=[common], help="pyramid stability and width trend")
    s.set_defaults(func=cmd_pyramid)

    s = sub.add_parser("selftest", help="run the acceptance checks")
    s.add_argument("--only", type=_ints, help="criterion numbers, e.g. 1,6-8")
    s.add_argument("--mnist-images")
    s.add_argument("--mnist-labels")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if hasattr(args, "out"):
        out = resolve_out_dir(args.out)
        args.out = str(out) if out else None
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IdxError, InsufficientSamples) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
