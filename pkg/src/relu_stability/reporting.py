"""Report rows, CSV / JSON-lines emission, config hashing and run manifests."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import platform

import numpy as np
import scipy

COLUMNS = (
    "run_id", "eta", "seed", "init_scale", "batch", "status", "steps", "final_loss",
    "knot_clearance", "certified", "lambda_max", "two_over_eta", "s_theta",
    "stability_norm_merged", "lower_bound", "r_norm_repr", "g_hat_norm", "min_grad_norm_est",
    "upper_bound", "flattest_sharpness", "mean_abs_bias_bar", "val_accuracy",
    "verdict_thm1", "verdict_lemma1",
)
FORMATS = ("csv", "jsonl")


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def _json_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v) if math.isfinite(v) else json.dumps(format_float(v))
    return json.dumps(str(v))


def emit_report(rows, fmt: str = "csv") -> bytes:
    """Serialize rows (mappings keyed by :data:`COLUMNS`) in column order."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in COLUMNS])
        return buf.getvalue().encode()
    lines = ["{" + ", ".join(f"{json.dumps(c)}: {_json_value(row.get(c))}" for c in COLUMNS) + "}"
             for row in rows]
    return "".join(line + "\n" for line in lines).encode()


_INT_COLS = {"seed", "batch", "steps"}
_BOOL_COLS = {"certified", "verdict_thm1", "verdict_lemma1"}
_STR_COLS = {"run_id", "status"}


def _parse_cell(col: str, s):
    if s is None or s == "":
        return None
    if col in _STR_COLS:
        return s
    if col in _BOOL_COLS:
        return s is True or s == "true"
    if col in _INT_COLS:
        return int(s)
    return float(s)


def parse_report(data: bytes, fmt: str = "csv") -> list[dict]:
    """Inverse of :func:`emit_report`."""
    text = data.decode()
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError("unexpected CSV header")
        return [{c: _parse_cell(c, v) for c, v in zip(COLUMNS, rec)} for rec in reader]
    out = []
    for line in text.splitlines():
        obj = json.loads(line)
        out.append({c: _parse_cell(c, obj.get(c)) for c in COLUMNS})
    return out


def _canonical(obj):
    if dataclasses.is_dataclass(obj):
        obj = dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def config_hash(config) -> str:
    """sha256 of the canonical JSON form of a config (floats at 17 digits)."""
    blob = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run_id(cfg_hash: str, eta_index: int, seed: int) -> str:
    return f"{cfg_hash}:{eta_index}:{seed}"


def tool_versions() -> dict:
    from . import __version__
    return {
        "relu_stability": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def manifest(kind: str, config, extra: dict | None = None) -> bytes:
    body = {
        "kind": kind,
        "config": _canonical(config),
        "config_hash": config_hash(config),
        "columns": list(COLUMNS),
        "versions": tool_versions(),
    }
    body.update(extra or {})
    return (json.dumps(body, indent=2, sort_keys=True) + "\n").encode()


def report_row(cfg_hash: str, eta_index: int, eta: float, seed: int, init_scale: float,
               batch: int, result, report=None, val_accuracy=None) -> dict:
    """One CSV row from a training result and its stability report.

    Diverged runs carry no report; their stability columns stay empty.
    """
    row = {
        "run_id": run_id(cfg_hash, eta_index, seed),
        "eta": eta,
        "two_over_eta": 2.0 / eta,
        "seed": seed,
        "init_scale": init_scale,
        "batch": batch,
        "status": result.status.value,
        "steps": result.steps,
        "final_loss": result.final_loss,
        "val_accuracy": val_accuracy,
    }
    if report is not None:
        row.update(
            knot_clearance=report.knot_clearance,
            certified=report.certified,
            lambda_max=report.lambda_max,
            s_theta=report.s_theta,
            stability_norm_merged=report.stability_norm,
            lower_bound=report.lower_bound,
            r_norm_repr=report.r_norm_repr,
            g_hat_norm=report.g_hat_norm,
            min_grad_norm_est=report.min_grad_norm_est,
            upper_bound=report.upper_bound,
            flattest_sharpness=report.flattest_sharpness,
            mean_abs_bias_bar=report.mean_abs_bias_bar,
            verdict_thm1=report.verdict_thm1,
            verdict_lemma1=report.verdict_lemma1,
        )
    return row
