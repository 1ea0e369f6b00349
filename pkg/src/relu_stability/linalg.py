"""Small dense symmetric eigenproblems, top singular triples and covariance.

Everything here works on plain float64 numpy arrays. Matrices are at most a
few thousand square; the Hessians we care about are usually handled through
their n x n Gram matrix, which is far smaller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
JACOBI_MAX_DIM = 64


class NonConvergence(RuntimeError):
    """Iterative eigensolver did not reach the requested residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float


def _as_symmetric(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    scale = max(np.abs(m).max(initial=0.0), 1e-300)
    if np.abs(m - m.T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def jacobi_eigh(m, tol: float = 1e-14, max_sweeps: int = 100):
    """Full eigendecomposition by cyclic Jacobi rotations.

    Returns (values, vectors) with values ascending and eigenvectors in the
    columns, like ``numpy.linalg.eigh``.
    """
    a = _as_symmetric(m).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    total = np.sqrt(np.sum(a * a))
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))  # direct sum, no cancellation
        if off <= tol * max(total, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta^2 would overflow
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    values = a.diagonal().copy()
    order = np.argsort(values)
    return values[order], v[:, order]


def _power(m: np.ndarray, x: np.ndarray, tol_abs: float, max_iter: int):
    lam = float(x @ m @ x)
    res = np.inf
    for it in range(1, max_iter + 1):
        y = m @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, x, it, 0.0
        x = y / ny
        mx = m @ x
        lam = float(x @ mx)
        res = float(np.linalg.norm(mx - lam * x))
        if res <= tol_abs:
            return lam, x, it, res
    raise NonConvergence(res, max_iter)


def top_eigenpair(m, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                  start=None) -> EigenResult:
    """Largest (algebraic) eigenvalue of a symmetric matrix.

    Power iteration from the normalized all-ones vector (or ``start``). If the
    dominant-magnitude eigenvalue is negative the matrix is shifted and the
    iteration restarted. Small matrices (dim <= 64) fall back to Jacobi when
    the iteration stalls; larger ones raise :class:`NonConvergence`.
    """
    m = _as_symmetric(m)
    n = m.shape[0]
    fro = float(np.sqrt(np.sum(m * m)))
    if fro == 0.0:
        e = np.ones(n) / np.sqrt(n)
        return EigenResult(0.0, e, 0, 0.0)
    tol_abs = tol * fro
    x0 = np.ones(n) if start is None else np.asarray(start, dtype=np.float64).copy()
    if np.linalg.norm(x0) == 0.0:
        x0 = np.ones(n)
    x0 = x0 / np.linalg.norm(x0)
    try:
        lam, x, its, res = _power(m, x0, tol_abs, max_iter)
        if lam < 0.0:
            # dominant magnitude was the bottom of the spectrum; shift it away
            shifted = m - lam * np.eye(n)
            mu, x, its2, res = _power(shifted, x0, tol_abs, max_iter)
            its += its2
            lam = mu + lam
            res = float(np.linalg.norm(m @ x - lam * x))
        return EigenResult(lam, _fix_sign(x), its, res)
    except NonConvergence:
        if n > JACOBI_MAX_DIM:
            raise
    values, vectors = jacobi_eigh(m)
    x = _fix_sign(vectors[:, -1])
    lam = float(values[-1])
    return EigenResult(lam, x, max_iter, float(np.linalg.norm(m @ x - lam * x)))


def _fix_sign(x: np.ndarray) -> np.ndarray:
    # deterministic sign: largest-magnitude entry positive
    i = int(np.argmax(np.abs(x)))
    return x if x[i] >= 0 else -x


def top_singular_triple(m, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """(sigma, u, v) for the top singular value of ``m`` with ``m v = sigma u``.

    Works on whichever Gram matrix (m m^T or m^T m) is smaller.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or not np.any(m):
        raise ValueError("need a nonzero 2-D matrix")
    rows, cols = m.shape
    if cols <= rows:
        res = top_eigenpair(m.T @ m, tol=tol, max_iter=max_iter)
        v = res.vector
        mv = m @ v
        sigma = float(np.linalg.norm(mv))
        u = mv / sigma
    else:
        res = top_eigenpair(m @ m.T, tol=tol, max_iter=max_iter)
        u = res.vector
        mtu = m.T @ u
        sigma = float(np.linalg.norm(mtu))
        v = mtu / sigma
    return sigma, u, v


def covariance(points) -> np.ndarray:
    """Population covariance (divide by n) of the rows of ``points``."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[0] < 1:
        raise ValueError("need at least one point")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    return 0.5 * (cov + cov.T)
