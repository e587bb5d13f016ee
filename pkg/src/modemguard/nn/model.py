"""Single-layer LSTM followed by two linear layers and a sigmoid output.

Gate blocks in the stacked LSTM weights are ordered input, forget,
candidate, output. The classifier reads the final hidden state only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

BCE_EPS = 1e-7
FORMAT_VERSION = 1

PARAM_NAMES = ("lstm.w_ih", "lstm.w_hh", "lstm.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b")

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 5
    seq_len: int = 6
    hidden_size: int = 2
    fc1_out: int = 8

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, I, F = self.hidden_size, self.input_size, self.fc1_out
        return {
            "lstm.w_ih": (4 * H, I),
            "lstm.w_hh": (4 * H, H),
            "lstm.b": (4 * H,),
            "fc1.w": (F, H),
            "fc1.b": (F,),
            "fc2.w": (1, F),
            "fc2.b": (1,),
        }


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        """Per-feature statistics over all samples and time steps of a (B, F, L) batch."""
        flat = X.transpose(1, 0, 2).reshape(X.shape[1], -1)
        return cls(flat.mean(axis=1), np.maximum(flat.std(axis=1), 1e-8))

    @classmethod
    def identity(cls, n: int) -> "NormStats":
        return cls(np.zeros(n), np.ones(n))


@dataclass
class ModelBundle:
    config: ModelConfig
    params: Params
    norm: NormStats
    threshold: float = 0.5
    version: int = FORMAT_VERSION
    meta: dict = field(default_factory=dict)

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.config, {k: v.copy() for k, v in self.params.items()},
                           NormStats(self.norm.mean.copy(), self.norm.std.copy()),
                           self.threshold, self.version, dict(self.meta))


def init_params(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Uniform(-k, k) with k = 1/sqrt(fan_in of the layer); fan_in is hidden_size for the LSTM."""
    k_lstm = 1.0 / math.sqrt(config.hidden_size)
    k_fc1 = 1.0 / math.sqrt(config.hidden_size)
    k_fc2 = 1.0 / math.sqrt(config.fc1_out)
    ks = {"lstm.w_ih": k_lstm, "lstm.w_hh": k_lstm, "lstm.b": k_lstm,
          "fc1.w": k_fc1, "fc1.b": k_fc1, "fc2.w": k_fc2, "fc2.b": k_fc2}
    return {name: rng.uniform(-ks[name], ks[name], shape)
            for name, shape in config.shapes().items()}


def zero_params(config: ModelConfig) -> Params:
    return {name: np.zeros(shape) for name, shape in config.shapes().items()}


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-np.logaddexp(0.0, -z))


def normalize(X: np.ndarray, norm: NormStats) -> np.ndarray:
    return (X - norm.mean[:, None]) / norm.std[:, None]


@dataclass
class _Cache:
    xs: np.ndarray      # (L, B, I)
    hs: np.ndarray      # (L+1, B, H), hs[0] = 0
    cs: np.ndarray      # (L+1, B, H)
    gates: np.ndarray   # (L, B, 4H), post-activation
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    p: np.ndarray


def _forward(params: Params, Xn: np.ndarray) -> _Cache:
    """Xn: normalized (B, I, L)."""
    B, I, L = Xn.shape
    H = params["lstm.w_hh"].shape[1]
    w_ih, w_hh, b = params["lstm.w_ih"], params["lstm.w_hh"], params["lstm.b"]
    xs = Xn.transpose(2, 0, 1)
    hs = np.zeros((L + 1, B, H))
    cs = np.zeros((L + 1, B, H))
    gates = np.empty((L, B, 4 * H))
    for t in range(L):
        a = xs[t] @ w_ih.T + hs[t] @ w_hh.T + b
        g = gates[t]
        g[:, : 2 * H] = sigmoid(a[:, : 2 * H])
        g[:, 2 * H: 3 * H] = np.tanh(a[:, 2 * H: 3 * H])
        g[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        cs[t + 1] = f * cs[t] + i * gg
        hs[t + 1] = o * np.tanh(cs[t + 1])
    z1 = hs[L] @ params["fc1.w"].T + params["fc1.b"]
    a1 = np.maximum(z1, 0.0)
    z2 = (a1 @ params["fc2.w"].T + params["fc2.b"])[:, 0]
    return _Cache(xs, hs, cs, gates, z1, a1, z2, sigmoid(z2))


def _check_input(X: np.ndarray, config: ModelConfig) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != config.input_size:
        raise DomainError(f"expected input of shape (B, {config.input_size}, L), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("input contains non-finite values")
    return X


def predict_proba(bundle: ModelBundle, X: np.ndarray) -> np.ndarray:
    """Probability of label 1 (normal) for each window of a (B, 5, L) batch."""
    X = _check_input(X, bundle.config)
    return _forward(bundle.params, normalize(X, bundle.norm)).p


def forward(bundle: ModelBundle, x: np.ndarray) -> float:
    """Probability of label 1 (normal) for a single 5 x L window."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DomainError(f"expected a single {bundle.config.input_size} x L window, got shape {x.shape}")
    return float(predict_proba(bundle, x[None])[0])


def forward_reference(bundle: ModelBundle, x) -> float:
    """Scalar, loop-per-unit evaluation of ``forward`` used as an independent oracle."""
    P = {k: v.tolist() for k, v in bundle.params.items()}
    mean, std = bundle.norm.mean.tolist(), bundle.norm.std.tolist()
    n_in = len(x)
    L = len(x[0])
    H = bundle.config.hidden_size

    def sig(z):
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)

    h = [0.0] * H
    c = [0.0] * H
    for t in range(L):
        xt = [(x[j][t] - mean[j]) / std[j] for j in range(n_in)]
        pre = []
        for r in range(4 * H):
            s = P["lstm.b"][r]
            for j in range(n_in):
                s += P["lstm.w_ih"][r][j] * xt[j]
            for j in range(H):
                s += P["lstm.w_hh"][r][j] * h[j]
            pre.append(s)
        new_c, new_h = [], []
        for u in range(H):
            i = sig(pre[u])
            f = sig(pre[H + u])
            g = math.tanh(pre[2 * H + u])
            o = sig(pre[3 * H + u])
            cu = f * c[u] + i * g
            new_c.append(cu)
            new_h.append(o * math.tanh(cu))
        h, c = new_h, new_c
    a1 = []
    for r in range(len(P["fc1.b"])):
        s = P["fc1.b"][r] + sum(P["fc1.w"][r][j] * h[j] for j in range(H))
        a1.append(max(s, 0.0))
    z2 = P["fc2.b"][0] + sum(P["fc2.w"][0][j] * a1[j] for j in range(len(a1)))
    return sig(z2)


def bce_loss(p, y) -> np.ndarray | float:
    """Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]."""
    pc = np.clip(np.asarray(p, dtype=float), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=float)
    out = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    return float(out) if out.ndim == 0 else out


def loss_and_grads(params: Params, Xn: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Mean BCE over a normalized batch and its gradient for every parameter (BPTT).

    The clamp only guards the loss value; the output gradient is p - y.
    """
    B = Xn.shape[0]
    cache = _forward(params, Xn)
    loss = float(np.mean(bce_loss(cache.p, y)))
    H = params["lstm.w_hh"].shape[1]
    L = cache.xs.shape[0]

    dz2 = (cache.p - y) / B                        # (B,)
    grads: Params = {}
    grads["fc2.w"] = (dz2 @ cache.a1)[None, :]
    grads["fc2.b"] = np.array([dz2.sum()])
    dz1 = dz2[:, None] * params["fc2.w"][0][None, :] * (cache.z1 > 0)
    grads["fc1.w"] = dz1.T @ cache.hs[L]
    grads["fc1.b"] = dz1.sum(axis=0)
    dh = dz1 @ params["fc1.w"]
    dc = np.zeros_like(dh)

    d_w_ih = np.zeros_like(params["lstm.w_ih"])
    d_w_hh = np.zeros_like(params["lstm.w_hh"])
    d_b = np.zeros_like(params["lstm.b"])
    w_hh = params["lstm.w_hh"]
    for t in range(L - 1, -1, -1):
        g = cache.gates[t]
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cache.cs[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.empty((B, 4 * H))
        da[:, :H] = dc * gg * i * (1.0 - i)
        da[:, H:2 * H] = dc * cache.cs[t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        d_w_ih += da.T @ cache.xs[t]
        d_w_hh += da.T @ cache.hs[t]
        d_b += da.sum(axis=0)
        dh = da @ w_hh
        dc = dc * f
    grads["lstm.w_ih"] = d_w_ih
    grads["lstm.w_hh"] = d_w_hh
    grads["lstm.b"] = d_b
    return loss, grads


def backward(bundle: ModelBundle, X: np.ndarray, y: np.ndarray) -> Params:
    """Gradient of the mean BCE over a raw (unnormalized) batch."""
    X = _check_input(X, bundle.config)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0 or len(y) != len(X):
        raise DomainError("backward needs a non-empty batch with one label per window")
    return loss_and_grads(bundle.params, normalize(X, bundle.norm), y)[1]


def batch_loss(bundle: ModelBundle, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(bce_loss(predict_proba(bundle, X), y)))
