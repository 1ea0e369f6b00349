"""End-to-end acceptance checks, shared by ``selftest`` and the test suite.

Every ``criterion_*`` returns an :class:`Outcome` holding the raw
measurements next to the verdict, so callers can re-check them against their
own pinned tolerances.
"""
from __future__ import annotations

import functools
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import analytic, pyramid
from .dataset import Dataset, gen_gaussian_regression
from .experiments import (InitScaleConfig, MnistConfig, PyramidConfig, SweepConfig,
                          run_init_scale, run_mnist, run_synthetic_sweep)
from .network import (fd_hessian, hessian_at_minimum, knot_clearance_of, loss, sharpness,
                      tangent_features)
from .rng import Stream
from .stability import TOL_EOS, WeightEval
from .training import Status, TrainConfig, init_shallow, train_gd

HESSIAN_ATOL = 1e-4
HESSIAN_MIN_CLEARANCE = 1e-4
LOWER_BOUND_RTOL = 1e-6
LEMMA1_FACTOR = 1.05
THM1_TOL = 1e-6
TREND_S_MAX = -0.8
TREND_B_MIN = 0.5
SANDWICH_ATOL = 1e-6
ORACLE_TOL = 1e-12
LINE_RTOL = 2e-2
LINE_CLEARANCE = 0.1
PYRAMID_LOSS_MAX = 1e-16
PYRAMID_MIN_SUCCESS = 8
DEPTH_RMSE_GOOD = 0.05
PLATEAU_RTOL = 0.10
MNIST_MIN_ACCURACY = 0.95

MNIST_IMAGES_ENV = "RELU_STABILITY_MNIST_IMAGES"
MNIST_LABELS_ENV = "RELU_STABILITY_MNIST_LABELS"


@dataclass
class Outcome:
    number: int
    name: str
    passed: bool | None  # None when skipped
    detail: str
    data: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "SKIP" if self.passed is None else ("PASS" if self.passed else "FAIL")
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - t0
        return out
    return wrapper


def _converged(rows):
    return [r for r in rows if r["status"] == Status.CONVERGED.value]


# -- 1: Hessian ----------------------------------------------------------

def fd_step(p, ds: Dataset, clearance: float) -> float:
    """Largest step <= 1e-4 whose stencil cannot move any pre-activation past a knot."""
    reach = (1.0 + float(np.max(np.linalg.norm(ds.xs, axis=1)))) * (1.0 + float(np.max(np.abs(p.flat()))))
    return min(1e-4, 0.1 * clearance / reach)


@_timed
def criterion_1(count: int = 20, max_attempts: int = 400) -> Outcome:
    errors, attempts = [], 0
    for seed in range(max_attempts):
        attempts += 1
        ds = gen_gaussian_regression(5, 3, 100 + seed)
        res = train_gd(init_shallow(3, 4, 1.0, seed), ds,
                       TrainConfig(eta=0.2, max_steps=30_000, stop_loss=1e-24))
        if res.status != Status.CONVERGED:
            continue
        clr = knot_clearance_of(res.params, ds)
        if clr <= HESSIAN_MIN_CLEARANCE:
            continue
        p = res.params
        H = hessian_at_minimum(tangent_features(p, ds))
        Hfd = fd_hessian(lambda th: loss(p.with_flat(th), ds), p.flat(), h=fd_step(p, ds, clr))
        errors.append(float(np.max(np.abs(H - Hfd))))
        if len(errors) == count:
            break
    worst = max(errors) if errors else math.inf
    ok = len(errors) == count and worst <= HESSIAN_ATOL
    return Outcome(1, "Hessian vs finite differences", ok,
                   f"{len(errors)} minima ({attempts} attempts), worst entry error {worst:.2e}",
                   {"errors": errors, "attempts": attempts})


# -- 2-5: desk sweep -----------------------------------------------------

@functools.lru_cache(maxsize=None)
def desk_sweep():
    return run_synthetic_sweep(SweepConfig(flattest="on"))


@_timed
def criterion_2() -> Outcome:
    rows = _converged(desk_sweep().rows)
    cert = [r for r in rows if r["certified"]]
    bad = [r for r in cert if 1.0 + 2.0 * r["s_theta"] > r["lambda_max"] * (1.0 + LOWER_BOUND_RTOL)]
    bad_all = [r for r in rows if 1.0 + 2.0 * r["s_theta"] > r["lambda_max"] * (1.0 + LOWER_BOUND_RTOL)]
    ok = len(cert) > 0 and not bad
    return Outcome(2, "lower bound 1 + 2 S <= lambda_max", ok,
                   f"{len(cert)} certified of {len(rows)} converged, {len(bad)} violations "
                   f"({len(bad_all)} among all converged)",
                   {"certified": len(cert), "converged": len(rows), "violations": len(bad)})


@_timed
def criterion_3() -> Outcome:
    rows = _converged(desk_sweep().rows)
    bad = [r for r in rows
           if r["lambda_max"] > 2.0 / r["eta"] * LEMMA1_FACTOR
           or r["s_theta"] > 1.0 / r["eta"] - 0.5 + THM1_TOL / r["eta"]]
    worst = max((r["lambda_max"] * r["eta"] / 2.0 for r in rows), default=math.nan)
    return Outcome(3, "lambda_max <= 2/eta and S <= 1/eta - 1/2", bool(rows) and not bad,
                   f"{len(rows)} converged, {len(bad)} violations, max lambda*eta/2 = {worst:.3f}",
                   {"violations": len(bad), "max_ratio": worst})


def per_eta_medians(rows, key):
    etas = sorted({r["eta"] for r in rows})
    out = []
    for eta in etas:
        vals = [r[key] for r in rows if r["eta"] == eta]
        out.append(float(np.median(vals)) if vals else math.nan)
    return etas, out


@_timed
def criterion_4() -> Outcome:
    rows = _converged(desk_sweep().rows)
    etas, med_s = per_eta_medians(rows, "s_theta")
    _, med_b = per_eta_medians(rows, "mean_abs_bias_bar")
    rho_s = float(spearmanr(etas, med_s)[0]) if len(etas) > 1 else math.nan
    rho_b = float(spearmanr(etas, med_b)[0]) if len(etas) > 1 else math.nan
    ok = rho_s <= TREND_S_MAX and rho_b >= TREND_B_MIN
    return Outcome(4, "step-size trends of S and mean |b|", ok,
                   f"Spearman(S, eta) = {rho_s:+.3f}, Spearman(mean|b|, eta) = {rho_b:+.3f} "
                   f"over {len(etas)} step sizes [" + ", ".join(
                       f"eta={e:.4g}: n={sum(r['eta'] == e for r in rows)} S {s:.3f} |b| {b:.3f}"
                       for e, s, b in zip(etas, med_s, med_b)) + "]",
                   {"etas": etas, "median_s": med_s, "median_b": med_b,
                    "rho_s": rho_s, "rho_b": rho_b})


@_timed
def criterion_5() -> Outcome:
    rows = [r for r in _converged(desk_sweep().rows)
            if r["certified"] and r["flattest_sharpness"] is not None]
    bad = [r for r in rows
           if not (1.0 + 2.0 * r["s_theta"] - SANDWICH_ATOL <= r["flattest_sharpness"]
                   <= r["lambda_max"] + SANDWICH_ATOL)
           or r["flattest_sharpness"] > r["upper_bound"]]
    return Outcome(5, "sandwich lower <= flattest <= lambda_max, flattest <= upper", bool(rows) and not bad,
                   f"{len(rows)} certified runs with flattest, {len(bad)} violations",
                   {"checked": len(rows), "violations": len(bad)})


# -- 6: weight-function oracles -------------------------------------------

def brute_g_tilde(xs, v, b) -> float:
    n = len(xs)
    act = [x for x in xs if sum(xi * vi for xi, vi in zip(x, v)) > b]
    if not act:
        return 0.0
    m = len(act)
    margin = sum(sum(xi * vi for xi, vi in zip(x, v)) - b for x in act) / m
    mean = [sum(x[i] for x in act) / m for i in range(len(v))]
    return (m / n) ** 2 * margin * math.sqrt(sum(c * c for c in mean) + 1.0)


def brute_g(xs, v, b) -> float:
    return min(brute_g_tilde(xs, v, b), brute_g_tilde(xs, [-c for c in v], -b))


def brute_g_hat(xs, v, b) -> float:
    n = len(xs)
    act = [x for x in xs if sum(xi * vi for xi, vi in zip(x, v)) > b]
    if not act:
        return 0.0
    m = len(act)
    second = sum((sum(xi * vi for xi, vi in zip(x, v)) - b) ** 2 for x in act) / m
    sq = sum(sum(xi * xi for xi in x) for x in act) / m
    return (m / n) * math.sqrt(second) * math.sqrt(1.0 + sq)


def oracle_triples(count: int = 200, seed: int = 0):
    s = Stream(seed, stream=8)
    for _ in range(count):
        n = 1 + int(s.uniform(1)[0] * 12)
        d = 1 + int(s.uniform(1)[0] * 4)
        xs = s.normal((n, d)) * (0.5 + 2.0 * s.uniform(1)[0])
        v = s.normal(d)
        v /= np.linalg.norm(v)
        proj = xs @ v
        b = float(proj.min() - 0.5 + (np.ptp(proj) + 1.0) * s.uniform(1)[0])
        yield Dataset(xs, np.zeros(n)), v, b


@_timed
def criterion_6(count: int = 200) -> Outcome:
    worst = 0.0
    for ds, v, b in oracle_triples(count):
        w = WeightEval(ds)
        xs = ds.xs.tolist()
        vl = v.tolist()
        for fast, slow in ((w.g_tilde, brute_g_tilde), (w.g, brute_g), (w.g_hat, brute_g_hat)):
            a, e = fast(v, b), slow(xs, vl, b)
            worst = max(worst, abs(a - e) / max(1.0, abs(e)))
    two = Dataset(np.array(analytic.TWO_POINTS), np.zeros(2))
    w2 = WeightEval(two)
    s = Stream(1, stream=8)
    worst_two = 0.0
    for _ in range(count):
        th = 2.0 * math.pi * s.uniform(1)[0]
        v = np.array([math.cos(th), math.sin(th)])
        b = 3.0 * s.uniform(1)[0] - 1.5
        worst_two = max(worst_two, abs(analytic.two_point_g(v, b) - w2.g(v, b)))
    ok = worst <= ORACLE_TOL and worst_two <= ORACLE_TOL
    return Outcome(6, "weight functions vs brute force", ok,
                   f"worst g~/g/g^ error {worst:.1e} on {count} triples, two-point {worst_two:.1e}",
                   {"worst": worst, "worst_two_point": worst_two})


# -- 7: rho versus g -------------------------------------------------------

def random_lines(count: int = 50, seed: int = 0):
    s = Stream(seed, stream=9)
    lines = []
    while len(lines) < count:
        th = 2.0 * math.pi * s.uniform(1)[0]
        v = np.array([math.cos(th), math.sin(th)])
        b = 2.4 * s.uniform(1)[0] - 1.2
        if min(abs(float(p @ v) - b) for p in analytic.two_point_rho.singular_points) >= LINE_CLEARANCE:
            lines.append((v, b))
    return lines


def radial_checks():
    g = analytic.gaussian_g
    mid = np.geomspace(1e-2, 10.0, 40)
    mid_vals = np.array([analytic.radial_rho(g, r) for r in mid])
    large = np.geomspace(10.0, 1e3, 10)
    large_vals = np.array([analytic.radial_rho(g, r) * r for r in large])
    small = np.geomspace(1e-4, 1e-2, 10)
    small_vals = np.array([analytic.radial_rho(g, r) / math.log(1.0 / r) for r in small])
    return {
        "positive": bool(np.all(mid_vals > 0)),
        "decreasing": bool(np.all(np.diff(mid_vals) < 0)),
        # bounded: never exceeds twice its value at the end of the range nearest r = 1
        "large_bounded": bool(np.all(np.isfinite(large_vals))
                              and large_vals.max() <= 2.0 * abs(large_vals[0]) + 1e-12),
        "small_bounded": bool(np.all(np.isfinite(small_vals))
                              and small_vals.max() <= 2.0 * abs(small_vals[-1])),
        "small_ratio": small_vals.tolist(),
    }


@_timed
def criterion_7(count: int = 50) -> Outcome:
    worst = 0.0
    for v, b in random_lines(count):
        val = analytic.line_integral(analytic.two_point_rho, v, b)
        g = analytic.two_point_g(v, b)
        err = abs(val - g) / g if g > 0 else abs(val)
        worst = max(worst, err)
    rad = radial_checks()
    ok = worst <= LINE_RTOL and rad["positive"] and rad["decreasing"] \
        and rad["large_bounded"] and rad["small_bounded"]
    return Outcome(7, "line integrals of rho match g; radial profile shape", ok,
                   f"worst line error {worst:.1e} on {count} lines; positive={rad['positive']} "
                   f"decreasing={rad['decreasing']} r*rho bounded={rad['large_bounded']} "
                   f"rho/log(1/r) bounded={rad['small_bounded']}",
                   {"worst": worst, **rad})


# -- 8-9: pyramid --------------------------------------------------------

@_timed
def criterion_8(seeds=range(10)) -> Outcome:
    ds = pyramid.pyramid_dataset(2, 8, 0)
    star = pyramid.build_two_layer_pyramid(2)
    l0 = loss(star, ds)
    lam = sharpness(star, ds)
    stable = [pyramid.pyramid_stability_demo(2, 64, 1e-3, s, eta_factor=1.0) for s in seeds]
    unstable = [pyramid.pyramid_stability_demo(2, 64, 1e-3, s, eta_factor=2.5) for s in seeds]
    n_ok = sum(r.converged for r in stable)
    n_fail = sum(not r.converged for r in unstable)
    ok = l0 <= PYRAMID_LOSS_MAX and math.isfinite(lam) and n_ok >= PYRAMID_MIN_SUCCESS \
        and n_fail >= PYRAMID_MIN_SUCCESS
    return Outcome(8, "pyramid net stable at 1/lambda, unstable at 2.5/lambda", ok,
                   f"exact loss {l0:.1e}, lambda_max {lam:.4f}, recovered {n_ok}/{len(stable)}, "
                   f"failed at 2.5/lambda {n_fail}/{len(unstable)}",
                   {"loss": l0, "lambda_max": lam, "recovered": n_ok, "failed": n_fail})


@_timed
def criterion_9() -> Outcome:
    cfg = PyramidConfig()
    rows = pyramid.depth_separation_trend(cfg.d, cfg.widths, cfg.grid_n, cfg.trend_seed, cfg.restarts)
    ds = pyramid.pyramid_dataset(cfg.d, cfg.grid_n, cfg.trend_seed)
    thr = 1.0 / pyramid.two_layer_eta_star(cfg.d, ds) - 0.5
    rho = float(spearmanr([-r.fit_rmse for r in rows], [r.s_theta for r in rows])[0])
    good = [r for r in rows if r.fit_rmse <= DEPTH_RMSE_GOOD]
    bad = [r for r in good if not r.s_theta > thr]
    ok = rho > 0 and not bad
    table = ", ".join(f"k={r.k}: rmse {r.fit_rmse:.3f} S {r.s_theta:.3f}" for r in rows)
    return Outcome(9, "one-layer fits of the pyramid need growing S", ok,
                   f"Spearman(-rmse, S) = {rho:+.3f}, threshold {thr:.3f}, {len(good)} good fits, "
                   f"{len(bad)} below threshold [{table}]",
                   {"rows": rows, "threshold": thr, "rho": rho})


# -- 10: MNIST -----------------------------------------------------------

def mnist_paths(images=None, labels=None):
    images = images or os.environ.get(MNIST_IMAGES_ENV)
    labels = labels or os.environ.get(MNIST_LABELS_ENV)
    if images and labels and os.path.exists(images) and os.path.exists(labels):
        return images, labels
    return None


@_timed
def criterion_10(images=None, labels=None) -> Outcome:
    paths = mnist_paths(images, labels)
    if paths is None:
        return Outcome(10, "reduced-scale MNIST", None, "no MNIST IDX files configured")
    out = run_mnist(MnistConfig(images=paths[0], labels=paths[1]))
    rows = _converged(out.rows)
    bad = [r for r in rows
           if (r["certified"] and 1.0 + 2.0 * r["s_theta"] > r["lambda_max"] * (1.0 + LOWER_BOUND_RTOL))
           or r["lambda_max"] > 2.0 / r["eta"] * LEMMA1_FACTOR
           or r["s_theta"] > 1.0 / r["eta"] - 0.5 + THM1_TOL / r["eta"]]
    stable = [r for r in rows if r["verdict_lemma1"]]
    acc = max(stable, key=lambda r: r["eta"])["val_accuracy"] if stable else math.nan
    ok = bool(rows) and not bad and acc >= MNIST_MIN_ACCURACY
    return Outcome(10, "reduced-scale MNIST", ok,
                   f"{len(rows)} converged, {len(bad)} violations, accuracy at largest stable eta {acc:.3f}",
                   {"accuracy": acc, "violations": len(bad)})


# -- 11: init scale ------------------------------------------------------

def check_phase(table, rows, scale, tol_eos=TOL_EOS):
    """Plateau below the crossover and lambda <= 2/eta (1 + tol) from it on."""
    cross = table["crossover_index"]
    if cross is None:
        return False, "no crossover"
    below = [m for m in table["median_lambda_max"][:cross] if m is not None]
    plateau = float(np.median(below)) if below else math.nan
    flat = bool(below) and all(abs(m - plateau) <= PLATEAU_RTOL * plateau for m in below)
    etas = table["etas"]
    above = [r for r in rows if r["init_scale"] == scale and r["status"] == Status.CONVERGED.value
             and r["eta"] >= etas[cross]]
    pinned = all(r["lambda_max"] <= 2.0 / r["eta"] * (1.0 + tol_eos) for r in above)
    return flat and pinned, (f"crossover eta {etas[cross]:.4g}, plateau {plateau:.2f} "
                             f"(flat={flat}), {len(above)} runs at or above, pinned={pinned}")


@_timed
def criterion_11() -> Outcome:
    cfg = InitScaleConfig()
    out = run_init_scale(cfg)
    tables = {t["init_scale"]: t for t in out.summary["tables"]}
    ok, detail = check_phase(tables[1.0], out.rows, 1.0, cfg.tol_eos)
    big = tables[10.0]["crossover_eta"]
    return Outcome(11, "init-scale crossover", ok, f"scale 1: {detail}; scale 10 crossover {big}",
                   {"tables": out.summary["tables"]})


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
    11: criterion_11,
}


def run_all(only=None, mnist_images=None, mnist_labels=None, echo=print) -> list[Outcome]:
    results = []
    for number, fn in CRITERIA.items():
        if only and number not in only:
            continue
        out = fn(mnist_images, mnist_labels) if number == 10 else fn()
        if echo:
            echo(out.line())
        results.append(out)
    return results
