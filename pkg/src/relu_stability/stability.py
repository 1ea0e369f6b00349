"""Data-dependent weight functions, stability norm and sharpness bounds.

All expectations are over X drawn uniformly from the training inputs. Active
sets use the strict inequality x^T v > b, matching the sigma'(0) = 0
convention of the network code.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from . import linalg
from .dataset import Dataset, dataset_stats, knot_clearance
from .network import (NeuronAtom, ShallowParams, input_gradient, merge_atoms, normalize_atoms,
                      sharpness_from_features, tangent_features)
from .rng import Stream

TOL_REL = 1e-6
TOL_EOS = 0.05
UNIT_TOL = 1e-9


class NonUnitDirection(ValueError):
    pass


class EigengapCollapse(RuntimeError):
    """Top eigenvalue of the rebalanced Hessian is (numerically) repeated."""


def _check_unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise NonUnitDirection(f"|v| = {np.linalg.norm(v):.12g}")
    return v


class WeightEval:
    """Evaluates g~, g and g^ on one dataset, vectorized over directions.

    Read-only after construction; every method is a pure function of its
    arguments, so one instance can be shared between threads.
    """

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._sqnorm = np.sum(ds.xs ** 2, axis=1)

    def _moments(self, V: np.ndarray, b: np.ndarray):
        xs = self.ds.xs
        n = xs.shape[0]
        proj = xs @ V.T  # (n, m)
        margin = proj - b
        active = margin > 0.0
        cnt = active.sum(axis=0)
        safe = np.maximum(cnt, 1)
        marg = np.where(active, margin, 0.0)
        return n, cnt, safe, active, marg

    def g_tilde_many(self, V, b) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        n, cnt, safe, active, marg = self._moments(V, b)
        prob = cnt / n
        mean_margin = marg.sum(axis=0) / safe
        mean_x = (active.T.astype(np.float64) @ self.ds.xs) / safe[:, None]
        out = prob ** 2 * mean_margin * np.sqrt(np.sum(mean_x ** 2, axis=1) + 1.0)
        return np.where(cnt > 0, out, 0.0)

    def g_many(self, V, b) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        return np.minimum(self.g_tilde_many(V, b), self.g_tilde_many(-V, -b))

    def g_hat_many(self, V, b) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        n, cnt, safe, active, marg = self._moments(V, b)
        prob = cnt / n
        second = np.sum(marg ** 2, axis=0) / safe
        sq = (active.T.astype(np.float64) @ self._sqnorm) / safe
        out = prob * np.sqrt(second) * np.sqrt(1.0 + sq)
        return np.where(cnt > 0, out, 0.0)

    def g_tilde(self, v, b: float) -> float:
        return float(self.g_tilde_many(_check_unit(v), [b])[0])

    def g(self, v, b: float) -> float:
        return float(self.g_many(_check_unit(v), [b])[0])

    def g_hat(self, v, b: float) -> float:
        return float(self.g_hat_many(_check_unit(v), [b])[0])


def g_tilde(ds: Dataset, v, b: float) -> float:
    return WeightEval(ds).g_tilde(v, b)


def g(ds: Dataset, v, b: float) -> float:
    """min(g~(v, b), g~(-v, -b))."""
    return WeightEval(ds).g(v, b)


def g_hat(ds: Dataset, v, b: float) -> float:
    return WeightEval(ds).g_hat(v, b)


def _atom_arrays(atoms):
    if len(atoms) == 0:
        return np.zeros(0), None, np.zeros(0)
    a = np.array([at.a for at in atoms])
    V = np.array([at.v_bar for at in atoms])
    b = np.array([at.b_bar for at in atoms])
    return a, V, b


def stability_norm(atoms, ds: Dataset, merged: bool = False, weights: WeightEval | None = None,
                   merge_tol: float = 1e-9) -> float:
    """sum |a_i| g(v_i, b_i), optionally after merging coincident atoms."""
    if merged:
        atoms = merge_atoms(atoms, merge_tol)
    a, V, b = _atom_arrays(atoms)
    if a.size == 0:
        return 0.0
    w = weights or WeightEval(ds)
    return float(np.sum(np.abs(a) * w.g_many(V, b)))


def g_hat_norm(atoms, ds: Dataset, weights: WeightEval | None = None) -> float:
    a, V, b = _atom_arrays(atoms)
    if a.size == 0:
        return 0.0
    w = weights or WeightEval(ds)
    return float(np.sum(np.abs(a) * w.g_hat_many(V, b)))


# -- verdicts and bounds -------------------------------------------------

@dataclass(frozen=True)
class Verdicts:
    thm1: bool
    lemma1: bool
    certified: bool


def clearance_tol(ds: Dataset) -> float:
    return 1e-6 * (1.0 + float(np.max(np.linalg.norm(ds.xs, axis=1))))


def certify_thm1(s_theta: float, lambda_max: float, eta: float, clearance: float = math.inf,
                 clear_tol: float = 0.0, tol_rel: float = TOL_REL,
                 tol_eos: float = TOL_EOS) -> Verdicts:
    return Verdicts(
        thm1=s_theta <= 1.0 / eta - 0.5 + tol_rel / eta,
        lemma1=lambda_max <= 2.0 / eta * (1.0 + tol_eos),
        certified=clearance > clear_tol,
    )


def min_grad_norm_estimate(p: ShallowParams, ds: Dataset, extra_probes: int = 256,
                           seed: int = 0) -> float:
    """Smallest |grad_x f| seen over data points, random probes and far field.

    Every probe is a real point, so the result can only over-estimate the
    infimum over R^d.
    """
    if p.k == 0:
        return 0.0
    xs = ds.xs
    s = Stream(seed, stream=5)
    spread = float(np.max(np.abs(xs))) + 1.0
    rand = xs.mean(axis=0) + 3.0 * spread * s.normal((extra_probes, ds.d))
    dirs = np.concatenate([xs, s.normal((extra_probes, ds.d)), p.W1.T, np.eye(ds.d)])
    norms = np.linalg.norm(dirs, axis=1)
    dirs = dirs[norms > 0] / norms[norms > 0, None]
    dirs = np.concatenate([dirs, -dirs])
    b_scale = float(np.max(np.abs(p.b1) / np.maximum(np.linalg.norm(p.W1, axis=0), 1e-300),
                           initial=0.0))
    radius = 1e3 * (1.0 + spread + min(b_scale, 1e12))
    probes = np.concatenate([xs, rand, radius * dirs])
    grads = input_gradient(p, probes)
    return float(np.min(np.linalg.norm(grads, axis=1)))


def _data_factor(ds: Dataset) -> float:
    st = dataset_stats(ds)
    return math.sqrt(st.cov_top_eig) * math.sqrt(1.0 + st.mean_sq_norm)


def sharpness_upper_bound(atoms, ds: Dataset, min_grad_est: float,
                          weights: WeightEval | None = None) -> float:
    """1 + 2 sum|a|g^ + 4 (sum|a| + inf|grad f|) sqrt(lmax(Cov)) sqrt(1 + E|X|^2).

    sum|a| and sum|a|g^ over the given representation stand in for the
    function-space norms; both can only be larger, so the bound stays valid.
    """
    r_norm = float(np.sum(np.abs([a.a for a in atoms]))) if atoms else 0.0
    ghat = g_hat_norm(atoms, ds, weights)
    return 1.0 + 2.0 * ghat + 4.0 * (r_norm + min_grad_est) * _data_factor(ds)


def sufficient_stability_check(atoms, ds: Dataset, min_grad_est: float, eta: float,
                               weights: WeightEval | None = None) -> bool:
    r_norm = float(np.sum(np.abs([a.a for a in atoms]))) if atoms else 0.0
    lhs = g_hat_norm(atoms, ds, weights) + 2.0 * (r_norm + min_grad_est) * _data_factor(ds)
    rhs = 1.0 / eta - 0.5
    return bool(rhs > 0.0 and lhs <= rhs)  # no margin at all for eta >= 2


# -- flattest implementation ---------------------------------------------

@dataclass
class RebalanceState:
    log_c: np.ndarray
    current_lambda: float
    eigengap: float
    gap_collapsed: bool = False
    iterations: int = 0


@dataclass(frozen=True)
class FlattestOptions:
    log_c_bound: float = 30.0
    taus: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-8)
    max_iter: int = 500
    gap_tol: float = 1e-10


class _Rebalancer:
    """lambda_max of the Hessian after w1_i/c_i, b1_i/c_i, c_i w2_i, as a
    function of s = log c.

    Rescaling multiplies the W1/b1 rows of Phi by c_i and the w2 row by 1/c_i,
    so the n x n Gram matrix is Phi^T diag(r(s)) Phi / n with r the squared
    row scalings.
    """

    def __init__(self, p: ShallowParams, ds: Dataset):
        tf = tangent_features(p, ds)
        self.phi = tf.phi
        self.n = tf.n
        d, k = p.d, p.k
        self.k = k
        owner = np.full(self.phi.shape[0], -1)
        owner[:d * k] = np.repeat(np.arange(k), d)
        owner[d * k:d * k + k] = np.arange(k)
        self.in_rows = owner  # neuron index for W1/b1 rows
        self.out_rows = np.arange(d * k + k, d * k + 2 * k)
        in_sq = np.zeros(k)
        np.add.at(in_sq, owner[:d * k + k], np.sum(self.phi[:d * k + k] ** 2, axis=1))
        self.in_energy = in_sq  # sum_j (rows of neuron i)^2, i.e. A_i*
        self.out_energy = np.sum(self.phi[self.out_rows] ** 2, axis=1)  # B_i*

    def row_scale(self, s: np.ndarray) -> np.ndarray:
        r = np.ones(self.phi.shape[0])
        mask = self.in_rows >= 0
        r[mask] = np.exp(2.0 * s[self.in_rows[mask]])
        r[self.out_rows] = np.exp(-2.0 * s)
        return r

    def gram(self, s) -> np.ndarray:
        r = self.row_scale(s)
        return (self.phi.T * r) @ self.phi / self.n

    def eig(self, s):
        return np.linalg.eigh(self.gram(s))

    def grad_of(self, s, u: np.ndarray) -> np.ndarray:
        """d(u^T G u)/ds for a fixed unit vector u in data space."""
        z2 = (self.phi @ u) ** 2
        r = self.row_scale(s)
        zin = np.zeros(self.k)
        mask = self.in_rows >= 0
        np.add.at(zin, self.in_rows[mask], (r * z2)[mask])
        zout = (r * z2)[self.out_rows]
        return 2.0 * (zin - zout) / self.n

    def lam(self, s) -> float:
        return float(self.eig(s)[0][-1])

    def smoothed(self, s, tau):
        vals, vecs = self.eig(s)
        top = vals[-1]
        w = np.exp((vals - top) / tau)
        Z = w.sum()
        w /= Z
        f = top + tau * math.log(Z)
        z2 = (self.phi @ vecs) ** 2  # (P, n)
        r = self.row_scale(s)
        rz = (r[:, None] * z2) @ w
        zin = np.zeros(self.k)
        mask = self.in_rows >= 0
        np.add.at(zin, self.in_rows[mask], rz[mask])
        grad = 2.0 * (zin - rz[self.out_rows]) / self.n
        return f, grad

    def closed_form_start(self) -> np.ndarray:
        # c_i^2 = sqrt(B_i / A_i) balances the two row groups of each neuron
        a, b = self.in_energy, self.out_energy
        s = np.zeros(self.k)
        ok = (a > 0) & (b > 0)
        s[ok] = 0.25 * np.log(b[ok] / a[ok])
        return s


def flattest_sharpness(p: ShallowParams, ds: Dataset, opts: FlattestOptions | None = None,
                       start_log_c=None):
    """Minimize lambda_max over per-neuron rescalings (function preserving).

    lambda_max is convex in log c, so a smoothed (log-sum-exp over the
    spectrum) objective is minimized with L-BFGS for a decreasing sequence of
    temperatures. The closed-form balancing point and the unscaled network
    are kept as fallback candidates.
    """
    opts = opts or FlattestOptions()
    if p.k == 0:
        lam = sharpness_from_features(tangent_features(p, ds))
        return lam, RebalanceState(np.zeros(0), lam, math.inf)
    reb = _Rebalancer(p, ds)
    bound = opts.log_c_bound
    s0 = np.zeros(reb.k)
    candidates = [s0, np.clip(reb.closed_form_start(), -bound, bound)]
    if start_log_c is not None:
        candidates.append(np.asarray(start_log_c, dtype=np.float64))
    scored = [(reb.lam(s), i) for i, s in enumerate(candidates)]
    best_lam, best_i = min(scored)
    s = candidates[best_i].copy()
    iterations = 0
    for rel_tau in opts.taus:
        tau = rel_tau * max(best_lam, 1e-12)
        res = optimize.minimize(reb.smoothed, s, args=(tau,), jac=True, method="L-BFGS-B",
                                bounds=[(-bound, bound)] * reb.k,
                                options={"maxiter": opts.max_iter, "ftol": 1e-15,
                                         "gtol": 1e-12})
        iterations += int(res.nit)
        lam = reb.lam(res.x)
        if lam <= best_lam:
            best_lam, s = lam, res.x.copy()
    vals = reb.eig(s)[0]
    gap = float(vals[-1] - vals[-2]) if vals.size > 1 else math.inf
    state = RebalanceState(s, best_lam, gap, gap < opts.gap_tol * max(best_lam, 1.0),
                           iterations)
    return best_lam, state


# -- report --------------------------------------------------------------

@dataclass
class StabilityReport:
    eta: float
    lambda_max: float
    s_theta: float
    stability_norm: float
    lower_bound: float
    r_norm_repr: float
    g_hat_norm: float
    min_grad_norm_est: float
    upper_bound: float
    flattest_sharpness: float | None
    two_over_eta: float
    knot_clearance: float
    certified: bool
    verdict_thm1: bool
    verdict_lemma1: bool
    mean_abs_bias_bar: float
    sufficient_check: bool
    notes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def stability_report(p: ShallowParams, ds: Dataset, eta: float, flattest: bool = True,
                     extra_probes: int = 256, seed: int = 0) -> StabilityReport:
    atoms = normalize_atoms(p)
    weights = WeightEval(ds)
    lam = sharpness_from_features(tangent_features(p, ds))
    s_theta = stability_norm(atoms, ds, weights=weights)
    merged = stability_norm(atoms, ds, merged=True, weights=weights)
    clearance = knot_clearance(ds, atoms)
    mg = min_grad_norm_estimate(p, ds, extra_probes, seed)
    ub = sharpness_upper_bound(atoms, ds, mg, weights)
    flat = flattest_sharpness(p, ds)[0] if flattest else None
    v = certify_thm1(s_theta, lam, eta, clearance, clearance_tol(ds))
    return StabilityReport(
        eta=eta,
        lambda_max=lam,
        s_theta=s_theta,
        stability_norm=merged,
        lower_bound=1.0 + 2.0 * s_theta,
        r_norm_repr=float(np.sum(np.abs([a.a for a in atoms]))) if atoms else 0.0,
        g_hat_norm=g_hat_norm(atoms, ds, weights),
        min_grad_norm_est=mg,
        upper_bound=ub,
        flattest_sharpness=flat,
        two_over_eta=2.0 / eta,
        knot_clearance=clearance,
        certified=v.certified,
        verdict_thm1=v.thm1,
        verdict_lemma1=v.lemma1,
        mean_abs_bias_bar=float(np.mean([abs(a.b_bar) for a in atoms])) if atoms else 0.0,
        sufficient_check=sufficient_stability_check(atoms, ds, mg, eta, weights),
        notes={"surrogates": "r_norm_repr=sum|a|, g_hat_norm=sum|a| g_hat (representation level)"},
    )
