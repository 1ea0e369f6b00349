"""Shallow and two-hidden-layer ReLU networks with exact derivatives.

Flat parameter layout (part of the public contract, Hessian indices follow it):

* shallow:   vec(W1) column by column (neuron 1 weights, neuron 2 weights, ...),
             b1, w2, b2  -> length (d + 2) k + 1
* two-layer: vec(W1) by unit, b1, vec(W2) by unit, b2, w3, b3

The ReLU derivative at 0 is taken to be 0.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import linalg
from .dataset import Dataset


def relu(t):
    return np.maximum(t, 0.0)


@dataclass(frozen=True)
class ShallowParams:
    W1: np.ndarray  # (d, k), column i = incoming weights of neuron i
    b1: np.ndarray  # (k,)
    w2: np.ndarray  # (k,)
    b2: float

    def __post_init__(self):
        W1 = np.array(self.W1, dtype=np.float64, ndmin=2)
        b1 = np.array(self.b1, dtype=np.float64).reshape(-1)
        w2 = np.array(self.w2, dtype=np.float64).reshape(-1)
        if W1.shape[1] != b1.shape[0] or b1.shape != w2.shape:
            raise ValueError(f"inconsistent shapes W1{W1.shape} b1{b1.shape} w2{w2.shape}")
        for arr in (W1, b1, w2):
            arr.setflags(write=False)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", float(self.b2))

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def k(self) -> int:
        return self.W1.shape[1]

    @property
    def size(self) -> int:
        return (self.d + 2) * self.k + 1

    @classmethod
    def zeros(cls, d: int, k: int) -> "ShallowParams":
        return cls(np.zeros((d, k)), np.zeros(k), np.zeros(k), 0.0)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.T.reshape(-1), self.b1, self.w2, [self.b2]])

    def with_flat(self, theta) -> "ShallowParams":
        return shallow_from_flat(self.d, self.k, theta)


def shallow_from_flat(d: int, k: int, theta) -> ShallowParams:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != ((d + 2) * k + 1,):
        raise ValueError(f"expected {(d + 2) * k + 1} parameters, got {theta.shape}")
    dk = d * k
    return ShallowParams(theta[:dk].reshape(k, d).T, theta[dk:dk + k],
                         theta[dk + k:dk + 2 * k], theta[-1])


@dataclass(frozen=True)
class TwoLayerParams:
    W1: np.ndarray  # (d, k1)
    b1: np.ndarray  # (k1,)
    W2: np.ndarray  # (k1, k2)
    b2: np.ndarray  # (k2,)
    w3: np.ndarray  # (k2,)
    b3: float

    def __post_init__(self):
        W1 = np.array(self.W1, dtype=np.float64, ndmin=2)
        b1 = np.array(self.b1, dtype=np.float64).reshape(-1)
        W2 = np.array(self.W2, dtype=np.float64, ndmin=2)
        b2 = np.array(self.b2, dtype=np.float64).reshape(-1)
        w3 = np.array(self.w3, dtype=np.float64).reshape(-1)
        if W1.shape[1] != b1.shape[0] or W2.shape != (b1.shape[0], b2.shape[0]) \
                or w3.shape != b2.shape:
            raise ValueError("inconsistent two-layer shapes")
        for name, arr in (("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2), ("w3", w3)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "b3", float(self.b3))

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def k1(self) -> int:
        return self.W1.shape[1]

    @property
    def k2(self) -> int:
        return self.W2.shape[1]

    @property
    def size(self) -> int:
        return (self.d + 1) * self.k1 + (self.k1 + 2) * self.k2 + 1

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.T.reshape(-1), self.b1, self.W2.T.reshape(-1),
                               self.b2, self.w3, [self.b3]])

    def with_flat(self, theta) -> "TwoLayerParams":
        return two_layer_from_flat(self.d, self.k1, self.k2, theta)


def two_layer_from_flat(d: int, k1: int, k2: int, theta) -> TwoLayerParams:
    theta = np.asarray(theta, dtype=np.float64)
    sizes = [d * k1, k1, k1 * k2, k2, k2, 1]
    if theta.shape != (sum(sizes),):
        raise ValueError(f"expected {sum(sizes)} parameters, got {theta.shape}")
    parts = np.split(theta, np.cumsum(sizes)[:-1])
    return TwoLayerParams(parts[0].reshape(k1, d).T, parts[1], parts[2].reshape(k2, k1).T,
                          parts[3], parts[4], parts[5][0])


# -- shallow network -----------------------------------------------------

def _pre(p: ShallowParams, xs: np.ndarray) -> np.ndarray:
    return xs @ p.W1 + p.b1


def forward_shallow(p: ShallowParams, x) -> np.ndarray | float:
    """Network output at a single point (d,) or a batch (m, d)."""
    x = np.asarray(x, dtype=np.float64)
    xs = np.atleast_2d(x)
    out = relu(_pre(p, xs)) @ p.w2 + p.b2
    return float(out[0]) if x.ndim == 1 else out


def activation_pattern(p: ShallowParams, xs) -> np.ndarray:
    """Boolean (n, k) table of strictly positive preactivations."""
    return _pre(p, np.atleast_2d(xs)) > 0.0


def loss(p, ds: Dataset) -> float:
    """Quadratic loss (1/2n) sum (f(x_j) - y_j)^2 for either network kind."""
    r = predict(p, ds.xs) - ds.ys
    return 0.5 * float(np.mean(r * r))


def predict(p, xs) -> np.ndarray:
    if isinstance(p, TwoLayerParams):
        return forward_two_layer(p, np.atleast_2d(xs))
    return np.atleast_1d(forward_shallow(p, np.atleast_2d(xs)))


def _shallow_grad_flat(p: ShallowParams, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    pre = xs @ p.W1 + p.b1
    act = pre > 0.0
    h = pre * act
    r = h @ p.w2 + p.b2 - ys
    m = xs.shape[0]
    delta = (r[:, None] * act) * p.w2  # (m, k)
    gW1 = xs.T @ delta  # (d, k)
    out = np.empty(p.size)
    dk = p.d * p.k
    out[:dk] = gW1.T.reshape(-1)
    out[dk:dk + p.k] = delta.sum(axis=0)
    out[dk + p.k:dk + 2 * p.k] = h.T @ r
    out[-1] = r.sum()
    return out / m


def grad_loss(p, ds: Dataset, batch=None) -> np.ndarray:
    """Flat gradient of the loss averaged over ``batch`` (all samples if None)."""
    xs, ys = ds.xs, ds.ys
    if batch is not None:
        batch = np.asarray(batch)
        if batch.size == 0:
            raise ValueError("empty batch")
        xs, ys = xs[batch], ys[batch]
    if isinstance(p, TwoLayerParams):
        return _two_layer_grad_flat(p, xs, ys)
    return _shallow_grad_flat(p, xs, ys)


@dataclass(frozen=True)
class TangentFeatures:
    phi: np.ndarray  # (P, n), column j = grad_theta f(x_j)
    pattern: np.ndarray  # (n, k) activation table (first hidden layer)

    @property
    def n(self) -> int:
        return self.phi.shape[1]


def tangent_features(p, ds: Dataset) -> TangentFeatures:
    if isinstance(p, TwoLayerParams):
        return _two_layer_tangent(p, ds.xs)
    xs = ds.xs
    n, d, k = xs.shape[0], p.d, p.k
    pre = xs @ p.W1 + p.b1
    act = pre > 0.0
    h = pre * act
    scaled = act * p.w2  # (n, k)
    phi = np.empty((p.size, n))
    # rows for W1: neuron-major then coordinate
    phi[:d * k] = (scaled[:, :, None] * xs[:, None, :]).reshape(n, d * k).T
    phi[d * k:d * k + k] = scaled.T
    phi[d * k + k:d * k + 2 * k] = h.T
    phi[-1] = 1.0
    return TangentFeatures(phi, act)


def hessian_at_minimum(tf: TangentFeatures) -> np.ndarray:
    """Phi Phi^T / n: the loss Hessian when all residuals vanish."""
    return tf.phi @ tf.phi.T / tf.n


def gram_matrix(tf: TangentFeatures) -> np.ndarray:
    """Phi^T Phi / n; same nonzero spectrum as the Hessian, only n x n."""
    return tf.phi.T @ tf.phi / tf.n


def sharpness_from_features(tf: TangentFeatures) -> float:
    P, n = tf.phi.shape
    m = gram_matrix(tf) if n <= P else hessian_at_minimum(tf)
    return linalg.top_eigenpair(m).value


def sharpness(p, ds: Dataset) -> float:
    """Top eigenvalue of the Gauss-Newton Hessian (exact at interpolation)."""
    return sharpness_from_features(tangent_features(p, ds))


def input_gradient(p: ShallowParams, xs) -> np.ndarray:
    """grad_x f at each row of ``xs``: W1 (w2 * pattern)."""
    act = activation_pattern(p, xs)
    return (act * p.w2) @ p.W1.T


# -- two-layer network ---------------------------------------------------

def _two_layer_forward_all(p: TwoLayerParams, xs: np.ndarray):
    pre1 = xs @ p.W1 + p.b1
    act1 = pre1 > 0.0
    h1 = pre1 * act1
    pre2 = h1 @ p.W2 + p.b2
    act2 = pre2 > 0.0
    h2 = pre2 * act2
    out = h2 @ p.w3 + p.b3
    return h1, act1, h2, act2, out


def forward_two_layer(p: TwoLayerParams, x):
    x = np.asarray(x, dtype=np.float64)
    out = _two_layer_forward_all(p, np.atleast_2d(x))[-1]
    return float(out[0]) if x.ndim == 1 else out


def _two_layer_per_sample(p: TwoLayerParams, xs: np.ndarray):
    h1, act1, h2, act2, out = _two_layer_forward_all(p, xs)
    delta2 = act2 * p.w3  # df/dpre2, (n, k2)
    delta1 = (delta2 @ p.W2.T) * act1  # df/dpre1, (n, k1)
    return h1, act1, h2, delta1, delta2, out


def _two_layer_grad_flat(p: TwoLayerParams, xs, ys) -> np.ndarray:
    h1, act1, h2, delta1, delta2, out = _two_layer_per_sample(p, xs)
    r = out - ys
    m = xs.shape[0]
    gW1 = xs.T @ (r[:, None] * delta1)
    gb1 = (r[:, None] * delta1).sum(axis=0)
    gW2 = h1.T @ (r[:, None] * delta2)
    gb2 = (r[:, None] * delta2).sum(axis=0)
    gw3 = h2.T @ r
    return np.concatenate([gW1.T.reshape(-1), gb1, gW2.T.reshape(-1), gb2, gw3,
                           [r.sum()]]) / m


def grad_loss_two_layer(p: TwoLayerParams, ds: Dataset, batch=None) -> np.ndarray:
    return grad_loss(p, ds, batch)


def _two_layer_tangent(p: TwoLayerParams, xs) -> TangentFeatures:
    h1, act1, h2, delta1, delta2, _ = _two_layer_per_sample(p, xs)
    n = xs.shape[0]
    blocks = [
        (delta1[:, :, None] * xs[:, None, :]).reshape(n, -1),
        delta1,
        (delta2[:, :, None] * h1[:, None, :]).reshape(n, -1),
        delta2,
        h2,
        np.ones((n, 1)),
    ]
    return TangentFeatures(np.concatenate(blocks, axis=1).T, act1)


def sharpness_two_layer(p: TwoLayerParams, ds: Dataset) -> float:
    return sharpness(p, ds)


# -- neuron atoms --------------------------------------------------------

@dataclass(frozen=True)
class NeuronAtom:
    a: float
    v_bar: np.ndarray
    b_bar: float


DROP_TOL = 1e-12
MERGE_TOL = 1e-9


def normalize_atoms(p: ShallowParams, merge: bool = False, merge_tol: float = MERGE_TOL,
                    drop_tol: float = DROP_TOL) -> list[NeuronAtom]:
    """One atom (w2 |w1|, w1/|w1|, -b1/|w1|) per neuron with |w1| > drop_tol.

    With ``merge`` atoms sitting on the same hyperplane are combined. A
    hyperplane is the same for (v, b) and (-v, -b), and both ReLU orientations
    put the same Laplacian mass on it, so antipodal atoms add as well.
    """
    norms = np.linalg.norm(p.W1, axis=0)
    atoms = []
    for i in np.flatnonzero(norms > drop_tol):
        nrm = norms[i]
        atoms.append(NeuronAtom(float(p.w2[i] * nrm), p.W1[:, i] / nrm, float(-p.b1[i] / nrm)))
    return merge_atoms(atoms, merge_tol) if merge else atoms


def merge_atoms(atoms, merge_tol: float = MERGE_TOL) -> list[NeuronAtom]:
    """Combine atoms lying on the same hyperplane, antipodal pairs included."""
    merged: list[NeuronAtom] = []
    for atom in atoms:
        for j, other in enumerate(merged):
            dot = float(np.dot(atom.v_bar, other.v_bar))
            same = 1.0 - dot <= merge_tol and abs(atom.b_bar - other.b_bar) <= merge_tol
            flipped = 1.0 + dot <= merge_tol and abs(atom.b_bar + other.b_bar) <= merge_tol
            if same or flipped:
                merged[j] = NeuronAtom(other.a + atom.a, other.v_bar, other.b_bar)
                break
        else:
            merged.append(atom)
    return [m for m in merged if m.a != 0.0]


def knot_clearance_of(p: ShallowParams, ds: Dataset) -> float:
    from .dataset import knot_clearance
    return knot_clearance(ds, normalize_atoms(p))


def rescale_neurons(p: ShallowParams, c) -> ShallowParams:
    """Function-preserving rescaling w1_i/c_i, b1_i/c_i, c_i w2_i."""
    c = np.asarray(c, dtype=np.float64)
    return ShallowParams(p.W1 / c, p.b1 / c, p.w2 * c, p.b2)


# -- checkpoints ---------------------------------------------------------

_MAGIC = b"RSTB"
_VERSION = 1


def save_params(p) -> bytes:
    """Versioned header, dims, then little-endian float64 blocks in flat layout."""
    if isinstance(p, TwoLayerParams):
        head = struct.pack("<4sIIIII", _MAGIC, _VERSION, 2, p.d, p.k1, p.k2)
    else:
        head = struct.pack("<4sIIIII", _MAGIC, _VERSION, 1, p.d, p.k, 0)
    return head + p.flat().astype("<f8").tobytes()


def load_params(data: bytes):
    magic, version, kind, d, k1, k2 = struct.unpack("<4sIIIII", data[:24])
    if magic != _MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    theta = np.frombuffer(data[24:], dtype="<f8").astype(np.float64)
    if kind == 1:
        return shallow_from_flat(d, k1, theta)
    if kind == 2:
        return two_layer_from_flat(d, k1, k2, theta)
    raise ValueError(f"unknown network kind {kind}")


# -- finite-difference oracles -------------------------------------------

def fd_gradient(fun: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


def fd_hessian(fun: Callable[[np.ndarray], float], theta, h: float = 1e-4) -> np.ndarray:
    """Four-point central second differences of a scalar function."""
    theta = np.asarray(theta, dtype=np.float64)
    m = theta.size
    H = np.empty((m, m))
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = h
        for j in range(i, m):
            ej = np.zeros(m)
            ej[j] = h
            val = (fun(theta + ei + ej) - fun(theta + ei - ej)
                   - fun(theta - ei + ej) + fun(theta - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = val
    return H
