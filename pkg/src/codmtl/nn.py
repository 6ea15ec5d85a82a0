"""Dense feedforward networks with hand-written backprop and AdamW.

Everything works on row batches: ``x`` may be a single vector or an
``(n, in)`` matrix. The first layer also accepts a ``scipy.sparse`` matrix,
which keeps one-hot leaf encodings cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.special import expit

from .errors import ConfigError, DataError

ACTIVATIONS = ("relu", "identity", "sigmoid")


@dataclass(frozen=True)
class NetSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_sizes) < 2:
            raise ConfigError("a network needs at least an input and an output size")
        if min(self.layer_sizes) < 1:
            raise ConfigError("layer sizes must be >= 1")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ConfigError("need exactly one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")

    @classmethod
    def mlp(cls, sizes, seed: int = 0, hidden: str = "relu", output: str = "identity") -> "NetSpec":
        n = len(sizes) - 1
        return cls(tuple(sizes), tuple([hidden] * (n - 1) + [output]), seed)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activations": list(self.activations), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), int(d.get("seed", 0)))


@dataclass
class NetParams:
    """Per layer: weight of shape (fan_out, fan_in) and bias of shape (fan_out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "NetParams":
        return NetParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetParams":
        Ws, bs = [], []
        for layer in d["layers"]:
            Ws.append(np.asarray(layer["weight"], dtype=float).reshape(layer["shape"]))
            bs.append(np.asarray(layer["bias"], dtype=float))
        return cls(Ws, bs)


def glorot_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)


def init_params(spec: NetSpec, rng: np.random.Generator | None = None) -> NetParams:
    """Glorot-uniform weights, zero biases. Uses ``spec.seed`` unless a generator is passed."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W, b = glorot_layer(rng, fan_in, fan_out)
        Ws.append(W)
        bs.append(b)
    return NetParams(Ws, bs)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    return z


def _as_batch(x, width: int, what: str = "input"):
    if sp.issparse(x):
        if x.shape[1] != width:
            raise DataError(f"{what} width {x.shape[1]} != expected {width}")
        return x, False
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != width:
        raise DataError(f"{what} width {x.shape[1]} != expected {width}")
    return x, single


def forward(params: NetParams, spec: NetSpec, x) -> list[np.ndarray]:
    """Post-activation output of every layer, final output last."""
    h, single = _as_batch(x, spec.n_in)
    outs = []
    for W, b, act in zip(params.weights, params.biases, spec.activations):
        h = _activate(act, np.asarray(h @ W.T) + b)
        outs.append(h)
    return [o[0] for o in outs] if single else outs


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


def grad(params: NetParams, spec: NetSpec, x, upstream, outputs: list[np.ndarray] | None = None,
         input_grad: bool = True) -> Gradients:
    """Reverse-mode gradient of ``sum(output * upstream)`` w.r.t. parameters and input.

    ``outputs`` may carry a cached ``forward`` result for the same batch.
    """
    xb, single = _as_batch(x, spec.n_in)
    u = np.asarray(upstream, dtype=float)
    if single:
        u = u[None, :]
    if u.shape != (xb.shape[0], spec.n_out):
        raise DataError(f"upstream shape {u.shape} != ({xb.shape[0]}, {spec.n_out})")
    if outputs is None:
        outputs = forward(params, spec, xb)
    elif single:
        outputs = [o[None, :] for o in outputs]
    n_layers = len(params.weights)
    dWs: list = [None] * n_layers
    dbs: list = [None] * n_layers
    delta = u
    for i in range(n_layers - 1, -1, -1):
        act, out = spec.activations[i], outputs[i]
        if act == "relu":
            delta = delta * (out > 0)
        elif act == "sigmoid":
            delta = delta * out * (1.0 - out)
        below = outputs[i - 1] if i > 0 else xb
        dWs[i] = np.asarray(below.T @ delta).T
        dbs[i] = delta.sum(axis=0)
        if i > 0 or input_grad:
            delta = delta @ params.weights[i]
    dx = None
    if input_grad:
        dx = delta[0] if single else delta
    return Gradients(dWs, dbs, dx)


# ---------------------------------------------------------------- losses
# Each returns (mean loss, gradient w.r.t. its first argument).


def cross_entropy(p: np.ndarray, y: np.ndarray, eps: float = 1e-12):
    """Binary cross-entropy on probabilities (for sigmoid-output nets)."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y, dtype=float)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(loss), (p - y) / (p * (1.0 - p)) / n


def soft_target_cross_entropy(z: np.ndarray, q: np.ndarray):
    """Binary cross-entropy of sigmoid(z) against targets q in [0, 1], on logits."""
    z = np.asarray(z, dtype=float)
    q = np.asarray(q, dtype=float)
    loss = np.mean(np.logaddexp(0.0, z) - q * z)
    return float(loss), (expit(z) - q) / z.size


bce_with_logits = soft_target_cross_entropy


def mse(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    return float(np.mean(d * d)), 2.0 * d / d.size


def binary_entropy(q) -> float:
    q = np.clip(np.asarray(q, dtype=float), 1e-15, 1 - 1e-15)
    return float(np.mean(-(q * np.log(q) + (1 - q) * np.log(1 - q))))


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState):
    """One AdamW update (decoupled decay, bias-corrected moments), in place.

    Returns ``(params, state)`` for convenience.
    """
    if len(params) != len(grads):
        raise DataError("parameter and gradient lists differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    decay = 1.0 - state.lr * state.weight_decay
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DataError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not p.flags.c_contiguous:
            raise DataError("parameters must be C-contiguous arrays")
        _adamw_kernel(_as2d(p), _as2d(np.asarray(g, dtype=float)), _as2d(m), _as2d(v),
                      state.lr, decay, b1, b2, c1, c2, state.epsilon)
    return params, state


def _as2d(a: np.ndarray) -> np.ndarray:
    return a.reshape(1, -1) if a.ndim < 2 else a.reshape(a.shape[0], -1)


@njit(cache=True)
def _adamw_kernel(p, g, m, v, lr, decay, b1, b2, c1, c2, eps):
    # g may be a strided (e.g. transposed) view; the rest are C-contiguous
    step = lr / c1
    sqrt_c2 = np.sqrt(c2)
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            gij = g[i, j]
            mi = b1 * m[i, j] + (1.0 - b1) * gij
            vi = b2 * v[i, j] + (1.0 - b2) * gij * gij
            m[i, j] = mi
            v[i, j] = vi
            p[i, j] = p[i, j] * decay - step * mi / (np.sqrt(vi) / sqrt_c2 + eps)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]
