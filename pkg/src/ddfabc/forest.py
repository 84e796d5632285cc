"""Deep differentiable forest: soft binary trees with sigmoid gates.

Tree layout is a full binary tree of depth ``d`` stored breadth-first: node
``n`` has children ``2n+1`` (left) and ``2n+2`` (right); leaf ``j`` is the
``j``-th leaf from the left. A gate value ``g = sigmoid(A.x - b)`` is the
probability of routing LEFT.

Inside a :class:`Forest` all parameters act on z-scored features and a
z-scored target; ``x_mean/x_std`` and ``y_mean/y_std`` map back to physical
units.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

MAGIC = b"DDFABC01"
LOSS_CODES = {"mse": 0, "mae": 1, "huber": 2}
LOSS_NAMES = {v: k for k, v in LOSS_CODES.items()}

_PREDICT_CHUNK = 4096


def gate(A, x, b) -> float:
    return float(expit(np.dot(A, x) - b))


@dataclass
class TreeParams:
    A: np.ndarray  # (2^d - 1, M)
    b: np.ndarray  # (2^d - 1,)
    Q: np.ndarray  # (2^d,)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.Q = np.atleast_1d(np.asarray(self.Q, dtype=float))
        n_nodes = self.A.shape[0]
        if self.b.shape != (n_nodes,) or self.Q.shape != (n_nodes + 1,) or (n_nodes + 1) & n_nodes:
            raise ValueError("tree needs 2^d - 1 nodes and 2^d leaves")

    @property
    def depth(self) -> int:
        return int(self.Q.size).bit_length() - 1

    @property
    def n_features(self) -> int:
        return self.A.shape[1]


@dataclass
class Forest:
    A: np.ndarray  # (K, 2^d - 1, M)
    b: np.ndarray  # (K, 2^d - 1)
    Q: np.ndarray  # (K, 2^d)
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    y_mean: float = 0.0
    y_std: float = 1.0
    loss_kind: str = "mse"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        K, N, M = self.A.shape
        if self.b.shape != (K, N) or self.Q.shape != (K, N + 1) or (N + 1) & N:
            raise ValueError("inconsistent forest parameter shapes")
        if self.x_mean is None:
            self.x_mean = np.zeros(M)
        if self.x_std is None:
            self.x_std = np.ones(M)
        if self.loss_kind not in LOSS_CODES:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")

    @property
    def n_trees(self) -> int:
        return self.A.shape[0]

    @property
    def depth(self) -> int:
        return int(self.Q.shape[1]).bit_length() - 1

    @property
    def n_features(self) -> int:
        return self.A.shape[2]

    @property
    def trees(self) -> list[TreeParams]:
        return [TreeParams(self.A[k], self.b[k], self.Q[k]) for k in range(self.n_trees)]

    @classmethod
    def from_trees(cls, trees, **kw) -> "Forest":
        return cls(np.stack([t.A for t in trees]), np.stack([t.b for t in trees]),
                   np.stack([t.Q for t in trees]), **kw)

    def params(self) -> dict[str, np.ndarray]:
        return {"A": self.A, "b": self.b, "Q": self.Q}

    def copy(self) -> "Forest":
        return Forest(self.A.copy(), self.b.copy(), self.Q.copy(), self.x_mean.copy(),
                      self.x_std.copy(), self.y_mean, self.y_std, self.loss_kind, dict(self.meta))

    def normalize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[-1]}")
        return (X - self.x_mean) / self.x_std

    def predict(self, X) -> np.ndarray:
        """Batched forest prediction in physical units."""
        Xn = np.atleast_2d(self.normalize(X))
        out = np.empty(Xn.shape[0])
        for s in range(0, Xn.shape[0], _PREDICT_CHUNK):
            out[s:s + _PREDICT_CHUNK] = predict_normalized(self, Xn[s:s + _PREDICT_CHUNK])
        return self.y_mean + self.y_std * out


def init_forest(X, y, n_trees: int, depth: int, rng: np.random.Generator,
                loss_kind: str = "mse", probe_size: int = 256) -> Forest:
    """Random forest initialised on z-scored data.

    A ~ U(-1/sqrt(M), 1/sqrt(M)); each threshold is drawn uniformly over the
    range its projection takes on a random probe batch; Q = 0 so the initial
    prediction is the target mean.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or y.shape != (X.shape[0],):
        raise ValueError("need a non-empty (N, M) feature matrix and N targets")
    if depth < 1 or n_trees < 1:
        raise ValueError("depth and n_trees must be >= 1")
    M = X.shape[1]
    x_mean, x_std = X.mean(axis=0), X.std(axis=0)
    x_std[~(x_std > 0)] = 1.0
    y_mean, y_std = float(y.mean()), float(y.std())
    if not y_std > 0:
        y_std = 1.0
    n_nodes = 2**depth - 1
    lim = 1.0 / np.sqrt(M)
    A = rng.uniform(-lim, lim, size=(n_trees, n_nodes, M))
    probe = rng.choice(X.shape[0], size=min(probe_size, X.shape[0]), replace=False)
    proj = np.einsum("pm,knm->pkn", (X[np.sort(probe)] - x_mean) / x_std, A)
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    b = lo + (hi - lo) * rng.random((n_trees, n_nodes))
    Q = np.zeros((n_trees, n_nodes + 1))
    return Forest(A, b, Q, x_mean, x_std, y_mean, y_std, loss_kind)


# --- forward --------------------------------------------------------------


def _forward(A, b, Q, Xn):
    B = Xn.shape[0]
    K, N, M = A.shape
    depth = int(N + 1).bit_length() - 1
    Z = (Xn @ A.reshape(K * N, M).T).reshape(B, K, N) - b
    G = expit(Z)
    mus = []
    mu = np.ones((B, K, 1))
    for level in range(depth):
        s = 2**level - 1
        g = G[:, :, s:2 * s + 1]
        mus.append(mu)
        mu = np.stack((mu * g, mu * (1.0 - g)), axis=-1).reshape(B, K, 2 * (s + 1))
    T = np.einsum("bkl,kl->bk", mu, Q)
    return G, mus, mu, T


def leaf_probabilities(tree: TreeParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _, _, P, _ = _forward(tree.A[None], tree.b[None], tree.Q[None], x[None])
    return P[0, 0]


def tree_predict(tree: TreeParams, x) -> float:
    return float(leaf_probabilities(tree, x) @ tree.Q)


def tree_outputs(forest: Forest, Xn) -> np.ndarray:
    """Per-tree outputs (B, K) on normalised inputs, normalised target units."""
    return _forward(forest.A, forest.b, forest.Q, np.atleast_2d(Xn))[3]


def predict_normalized(forest: Forest, Xn) -> np.ndarray:
    return tree_outputs(forest, Xn).mean(axis=1)


def forest_predict(forest: Forest, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forest_predict takes a single feature vector")
    return float(forest.predict(x[None])[0])


# --- loss and gradients ---------------------------------------------------


def loss(pred, target, kind: str = "mse", delta: float = 1.0):
    e = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    if kind == "mse":
        out = e * e
    elif kind == "mae":
        out = np.abs(e)
    elif kind == "huber":
        a = np.abs(e)
        out = np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return out if out.ndim else float(out)


def loss_grad(pred, target, kind: str = "mse", delta: float = 1.0) -> np.ndarray:
    """d loss / d pred."""
    e = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    if kind == "mse":
        return 2.0 * e
    if kind == "mae":
        return np.sign(e)
    if kind == "huber":
        return np.clip(e, -delta, delta)
    raise ValueError(f"unknown loss kind {kind!r}")


def batch_loss(forest: Forest, Xn, yn, kind: str = "mse", delta: float = 1.0,
               composition: str = "ensemble", l1: float = 0.0) -> float:
    """Mean batch loss on normalised data (the quantity :func:`backward` differentiates)."""
    T = tree_outputs(forest, Xn)
    yn = np.asarray(yn, dtype=float)
    if composition == "ensemble":
        value = float(np.mean(loss(T.mean(axis=1), yn, kind, delta)))
    elif composition == "per_tree":
        value = float(np.mean(loss(T, yn[:, None], kind, delta)))
    else:
        raise ValueError(f"unknown loss composition {composition!r}")
    if l1:
        value += l1 * float(np.abs(forest.A).sum())
    return value


def backward(forest: Forest, Xn, yn, kind: str = "mse", delta: float = 1.0,
             composition: str = "ensemble", l1: float = 0.0):
    """Analytic gradients of :func:`batch_loss` w.r.t. A, b and Q.

    Returns ``(loss_value, {"A": dA, "b": db, "Q": dQ})``. Gate gradients use
    subtree expectations V_n = g V_left + (1-g) V_right, so
    dT/dz_n = mu_n (V_left - V_right) g (1-g) with no division by g.
    """
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    yn = np.asarray(yn, dtype=float)
    if Xn.shape[0] == 0:
        raise ValueError("empty batch")
    A, b, Q = forest.A, forest.b, forest.Q
    B = Xn.shape[0]
    K, N, M = A.shape
    G, mus, P, T = _forward(A, b, Q, Xn)
    if composition == "ensemble":
        yhat = T.mean(axis=1)
        value = float(np.mean(loss(yhat, yn, kind, delta)))
        dT = np.repeat((loss_grad(yhat, yn, kind, delta) / (B * K))[:, None], K, axis=1)
    elif composition == "per_tree":
        value = float(np.mean(loss(T, yn[:, None], kind, delta)))
        dT = loss_grad(T, yn[:, None], kind, delta) / (B * K)
    else:
        raise ValueError(f"unknown loss composition {composition!r}")

    dQ = np.einsum("bk,bkl->kl", dT, P)
    dZ = np.empty((B, K, N))
    V = Q[None]
    for level in range(len(mus) - 1, -1, -1):
        s = 2**level - 1
        g = G[:, :, s:2 * s + 1]
        VL, VR = V[..., 0::2], V[..., 1::2]
        dZ[:, :, s:2 * s + 1] = dT[:, :, None] * mus[level] * (VL - VR) * g * (1.0 - g)
        V = g * VL + (1.0 - g) * VR
    dA = (dZ.reshape(B, K * N).T @ Xn).reshape(K, N, M)
    db = -dZ.sum(axis=0)
    if l1:
        value += l1 * float(np.abs(A).sum())
        dA += l1 * np.sign(A)
    return value, {"A": dA, "b": db, "Q": dQ}


# --- model file -----------------------------------------------------------


def forest_to_bytes(forest: Forest) -> bytes:
    """Little-endian model file; target scaling is folded into the leaf responses."""
    K, N, M = forest.A.shape
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<4I", K, forest.depth, M, LOSS_CODES[forest.loss_kind]))
    buf.write(np.asarray(forest.x_mean, dtype="<f8").tobytes())
    buf.write(np.asarray(forest.x_std, dtype="<f8").tobytes())
    Q = forest.y_mean + forest.y_std * forest.Q
    for k in range(K):
        nodes = np.concatenate([forest.A[k], forest.b[k][:, None]], axis=1)
        buf.write(nodes.astype("<f8").tobytes())
        buf.write(Q[k].astype("<f8").tobytes())
    return buf.getvalue()


def forest_from_bytes(data: bytes) -> Forest:
    if data[:8] != MAGIC:
        raise ValueError(f"not a forest model file (magic {data[:8]!r})")
    K, d, M, code = struct.unpack_from("<4I", data, 8)
    if code not in LOSS_NAMES or d < 1 or K < 1 or M < 1:
        raise ValueError("corrupt forest header")
    N, L = 2**d - 1, 2**d
    expected = 8 + 16 + 16 * M + K * 8 * (N * (M + 1) + L)
    if len(data) != expected:
        raise ValueError(f"model file size {len(data)} != expected {expected}")
    off = 24
    x_mean = np.frombuffer(data, "<f8", M, off).astype(float)
    off += 8 * M
    x_std = np.frombuffer(data, "<f8", M, off).astype(float)
    off += 8 * M
    A = np.empty((K, N, M))
    b = np.empty((K, N))
    Q = np.empty((K, L))
    for k in range(K):
        nodes = np.frombuffer(data, "<f8", N * (M + 1), off).reshape(N, M + 1)
        off += 8 * N * (M + 1)
        A[k], b[k] = nodes[:, :M], nodes[:, M]
        Q[k] = np.frombuffer(data, "<f8", L, off)
        off += 8 * L
    return Forest(A, b, Q, x_mean, x_std, 0.0, 1.0, LOSS_NAMES[code])


def save_forest(forest: Forest, path) -> None:
    with open(path, "wb") as fh:
        fh.write(forest_to_bytes(forest))


def load_forest(path) -> Forest:
    with open(path, "rb") as fh:
        return forest_from_bytes(fh.read())
