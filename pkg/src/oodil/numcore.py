"""Small numpy network toolkit: MLPs and an LSTM encoder with hand-written
backward passes, Adam, finite-difference checks and JSON checkpoints.

Tensors are plain float64 ``numpy.ndarray`` objects. Parameter sets are
``dict[str, ndarray]`` so the optimizer and checkpoint code can treat every
model the same way.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "identity")


class ShapeError(ValueError):
    pass


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def sigmoid(x):
    # exp of a non-positive argument: no overflow, and tiny outputs keep their precision
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow."""
    return -np.logaddexp(0.0, -x)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, a):
    # derivative expressed through the activation output
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


# --------------------------------------------------------------------------
# Multi-layer perceptron
# --------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Weights ``W{i}`` have shape (fan_in, fan_out); layer i computes
    ``act_i(x @ W{i} + b{i})``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("weights, biases and activations must have equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output "
                                 f"{self.weights[i - 1].shape[1]}")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def init(cls, sizes, activations, rng: np.random.Generator, out_scale: float = 1.0):
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 2) + ["identity"]
        weights = [glorot(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        weights[-1] = weights[-1] * out_scale
        biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        return cls(weights, biases, list(activations))

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_dict(self) -> dict[str, np.ndarray]:
        d = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"W{i}"] = w
            d[f"b{i}"] = b
        return d

    def with_dict(self, d: dict[str, np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return MlpParams([d[f"W{i}"] for i in range(n)], [d[f"b{i}"] for i in range(n)],
                         list(self.activations))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         list(self.activations))


def mlp_forward(params: MlpParams, x: np.ndarray, return_cache: bool = False):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"input last dim {x.shape[-1]} != {params.in_dim}")
    outs = [x]
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _act(act, h @ w + b)
        outs.append(h)
    if return_cache:
        return h, outs
    return h


def mlp_backward(params: MlpParams, x: np.ndarray, upstream: np.ndarray, cache=None):
    """Returns ``(grads, dx)`` where ``grads`` is keyed like ``params.to_dict()``.

    Batched inputs of any leading shape are summed over (the upstream gradient
    carries whatever averaging the loss applies).
    """
    if cache is None:
        out, cache = mlp_forward(params, x, return_cache=True)
    else:
        out = cache[-1]
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != out.shape:
        raise ShapeError(f"upstream gradient {g.shape} != output {out.shape}")
    grads = {}
    for i in reversed(range(len(params.weights))):
        g = g * _act_grad(params.activations[i], cache[i + 1])
        inp = cache[i]
        grads[f"W{i}"] = inp.reshape(-1, inp.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        grads[f"b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        g = g @ params.weights[i].T
    return grads, g


# --------------------------------------------------------------------------
# LSTM sequence encoder
# --------------------------------------------------------------------------


@dataclass
class RecurrentParams:
    """Single-layer LSTM. Gate blocks along the last axis are ordered
    input, forget, output, cell candidate."""

    W_x: np.ndarray  # (input_dim, 4H)
    W_h: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        H = self.W_h.shape[0]
        if self.W_h.shape != (H, 4 * H) or self.W_x.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ShapeError("inconsistent LSTM parameter shapes")

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator):
        W_x = glorot(rng, input_dim, 4 * hidden)
        W_h = glorot(rng, hidden, 4 * hidden)
        b = np.zeros(4 * hidden)
        # forget gate starts open
        b[hidden:2 * hidden] = 1.0
        return cls(W_x, W_h, b)

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[0]

    @property
    def n_params(self) -> int:
        return self.W_x.size + self.W_h.size + self.b.size

    def to_dict(self):
        return {"W_x": self.W_x, "W_h": self.W_h, "b": self.b}

    def with_dict(self, d):
        return RecurrentParams(d["W_x"], d["W_h"], d["b"])


def lstm_cell(params: RecurrentParams, x, h, c, xw=None):
    """One LSTM step; returns (h', c', gates) for batched x (B, D).

    ``xw`` may carry a precomputed ``x @ W_x``.
    """
    H = params.hidden
    z = h @ params.W_h
    z += (x @ params.W_x) if xw is None else xw
    z += params.b
    sg = sigmoid(z[:, :3 * H])
    i, f, o = sg[:, :H], sg[:, H:2 * H], sg[:, 2 * H:]
    g = np.tanh(z[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, o, g, tc)


def _normalize_rows(h):
    norm = np.linalg.norm(h, axis=-1, keepdims=True)
    degenerate = norm[..., 0] == 0.0
    safe = np.where(norm == 0.0, 1.0, norm)
    out = h / safe
    if np.any(degenerate):
        # a zero hidden state has no direction; pin it to the first axis
        out[degenerate] = 0.0
        out[degenerate, 0] = 1.0
    return out, norm


def rnn_encode(params: RecurrentParams, sequence: np.ndarray, normalize: bool = True,
               return_cache: bool = False):
    """Final hidden state of the LSTM over ``sequence``.

    ``sequence`` is (T, D) or a batch (B, T, D) of equal-length sequences.
    With ``normalize`` the result is scaled to unit L2 norm.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D), got {np.shape(sequence)}")
    B, T, D = seq.shape
    if T < 1:
        raise ValueError("cannot encode an empty sequence")
    if D != params.input_dim:
        raise ShapeError(f"state dim {D} != encoder input dim {params.input_dim}")
    H = params.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    xw = seq @ params.W_x
    steps = []
    for t in range(T):
        h_prev, c_prev = h, c
        h, c, gates = lstm_cell(params, None, h_prev, c_prev, xw[:, t])
        steps.append((h_prev, c_prev, gates))
    out, norm = _normalize_rows(h) if normalize else (h, None)
    out = check_finite(out, "encoder output")
    result = out[0] if single else out
    if return_cache:
        return result, (seq, steps, h, norm, normalize)
    return result


def rnn_backward(params: RecurrentParams, sequence: np.ndarray, upstream: np.ndarray,
                 cache=None):
    """Backprop through time. ``upstream`` is dLoss/d(output of rnn_encode)."""
    if cache is None:
        _, cache = rnn_encode(params, sequence, return_cache=True)
    seq, steps, h_last, norm, normalize = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None]
    B, T, _ = seq.shape
    H = params.hidden
    if normalize:
        f = h_last / np.where(norm == 0.0, 1.0, norm)
        dh = (g - f * np.sum(f * g, axis=-1, keepdims=True)) / np.where(norm == 0.0, np.inf, norm)
    else:
        dh = g
    dc = np.zeros((B, H))
    dz = np.empty((B, T, 4 * H))
    hs = np.empty((B, T, H))
    for t in reversed(range(T)):
        h_prev, c_prev, (i, f_g, o, g_g, tc) = steps[t]
        dc += dh * o * (1.0 - tc * tc)
        d = dz[:, t]
        d[:, :H] = dc * g_g * i * (1.0 - i)
        d[:, H:2 * H] = dc * c_prev * f_g * (1.0 - f_g)
        d[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        d[:, 3 * H:] = dc * i * (1.0 - g_g * g_g)
        hs[:, t] = h_prev
        dh = d @ params.W_h.T
        dc *= f_g
    dz2 = dz.reshape(B * T, 4 * H)
    dW_x = seq.reshape(B * T, -1).T @ dz2
    dW_h = hs.reshape(B * T, H).T @ dz2
    db = dz2.sum(axis=0)
    return {"W_x": dW_x, "W_h": dW_h, "b": db}


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam. Returns ``(new_params, new_state)``; inputs are not mutated.

    Raises ``FloatingPointError`` before touching anything if a gradient is
    not finite.
    """
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if np.shape(g) != np.shape(params[k]):
            raise ShapeError(f"{k}: grad {np.shape(g)} vs param {np.shape(params[k])}")
        check_finite(np.asarray(g), f"gradient {k}")
    t = state.t + 1
    new_m, new_v, new_p = dict(state.m), dict(state.v), dict(params)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for k, g in grads.items():
        m = state.m.get(k, np.zeros_like(params[k]))
        v = state.v.get(k, np.zeros_like(params[k]))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_m[k], new_v[k] = m, v
        new_p[k] = params[k] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_p, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)


# --------------------------------------------------------------------------
# Finite-difference gradient check
# --------------------------------------------------------------------------


class GradientCheckError(AssertionError):
    pass


def grad_check(loss_fn, params: dict, tolerance: float | None = None, h: float = 1e-5,
               max_entries: int = 1000, floor: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)``. When the parameter set is larger than
    ``max_entries`` a seeded random subset of entries is checked. The relative
    error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, grads = loss_fn(params)
    index = [(k, j) for k in sorted(params) for j in range(np.size(params[k]))]
    if len(index) > max_entries:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(index), size=max_entries, replace=False)
        index = [index[p] for p in sorted(pick)]
    worst = 0.0
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    for k, j in index:
        flat = work[k].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        lp, _ = loss_fn(work)
        flat[j] = orig - h
        lm, _ = loss_fn(work)
        flat[j] = orig
        num = (lp - lm) / (2.0 * h)
        ana = float(np.asarray(grads.get(k, np.zeros_like(params[k]))).reshape(-1)[j])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
    if tolerance is not None and worst > tolerance:
        raise GradientCheckError(f"max relative error {worst:.3e} > {tolerance:.1e}")
    return worst


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def params_to_json(params: dict) -> dict:
    out = {}
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        check_finite(arr, name)
        out[name] = {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
    return out


def params_from_json(doc: dict) -> dict:
    out = {}
    for name, entry in doc.items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != math.prod(shape):
            raise ShapeError(f"{name}: {data.size} values for shape {shape}")
        out[name] = data.reshape(shape)
    return out


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    doc = {"params": params_to_json(params)}
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[dict, dict]:
    doc = json.loads(Path(path).read_text())
    return params_from_json(doc["params"]), doc.get("meta", {})


def prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}/{k}": v for k, v in params.items()}


def unprefixed(prefix: str, params: dict) -> dict:
    p = prefix + "/"
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}
