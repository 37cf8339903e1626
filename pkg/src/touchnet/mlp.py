"""Fully connected sigmoid network with hand-written backprop and Adam.

Row-vector convention: a layer maps ``h -> sigmoid(h @ W + b)`` with ``W`` of
shape ``(fan_in, fan_out)``. With the default architecture that is
31 -> 10 -> 10 -> 10 -> 1, i.e. 551 parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TrainingError

PROB_EPS = 1e-12
# sigmoid output is clipped to the open interval so 0 and 1 never appear
_OUT_LO = np.finfo(float).tiny
_OUT_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 31
    hidden: tuple[int, ...] = (10, 10, 10)
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.input_dim, self.output_dim) + self.hidden) < 1:
            raise ValueError("all layer widths must be >= 1")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return list(zip(w[:-1], w[1:]))

    def to_json(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden), "output_dim": self.output_dim}


def param_count(arch: Architecture = Architecture()) -> int:
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in arch.shapes)


@dataclass
class NetworkParams:
    """Weights ``W_1..W_L`` and biases ``b_1..b_L`` (also used for gradients)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def arch(self) -> Architecture:
        dims = [w.shape[0] for w in self.weights] + [self.weights[-1].shape[1]]
        return Architecture(dims[0], tuple(dims[1:-1]), dims[-1])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    @classmethod
    def from_flat(cls, arch: Architecture, flat: np.ndarray) -> "NetworkParams":
        flat = np.asarray(flat, dtype=float)
        if flat.size != param_count(arch):
            raise ValueError(f"expected {param_count(arch)} values, got {flat.size}")
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in arch.shapes:
            weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
        for _, fan_out in arch.shapes:
            biases.append(flat[pos : pos + fan_out].copy())
            pos += fan_out
        return cls(weights, biases)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(arch: Architecture = Architecture(), seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def sigmoid(t):
    # tanh form is overflow-free for any finite t
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=float)))


def _activations(params: NetworkParams, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    for W, b in zip(params.weights, params.biases):
        h = sigmoid(h @ W + b)
        acts.append(h)
    return acts


def _as_batch(params: NetworkParams, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    d = params.weights[0].shape[0]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"input has {X.shape[-1]} features, network expects {d}")
    return X, single


def forward(params: NetworkParams, x):
    """Network output in (0, 1) for one input vector or a batch of rows."""
    X, single = _as_batch(params, x)
    out = np.clip(_activations(params, X)[-1][:, 0], _OUT_LO, _OUT_HI)
    return float(out[0]) if single else out


def loss_and_grad(params: NetworkParams, X, y) -> tuple[float, NetworkParams]:
    """Mean binary cross-entropy and its exact gradient.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]`` before the log; the
    gradient is that of the clamped loss, so it is zero for clamped samples.
    """
    X, _ = _as_batch(params, X)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    if n == 0 or y.size != n:
        raise ValueError("batch must be non-empty and match labels")
    acts = _activations(params, X)
    p_raw = acts[-1][:, 0]
    p = np.clip(p_raw, PROB_EPS, 1.0 - PROB_EPS)
    loss = -float(np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))

    inside = (p_raw > PROB_EPS) & (p_raw < 1.0 - PROB_EPS)
    dp = np.where(inside, (p - y) / (p * (1.0 - p)), 0.0) / n
    grads = params.zeros_like()
    # delta = dL/d(pre-activation) of the current layer
    delta = (dp * p_raw * (1.0 - p_raw))[:, None]
    for layer in range(len(params.weights) - 1, -1, -1):
        grads.weights[layer] = acts[layer].T @ delta
        grads.biases[layer] = delta.sum(axis=0)
        if layer:
            h = acts[layer]
            delta = (delta @ params.weights[layer].T) * h * (1.0 - h)
    return loss, grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3

    @classmethod
    def fresh(cls, params: NetworkParams, lr: float = 1e-3, **kw) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(m=zeros, v=[z.copy() for z in zeros], lr=lr, **kw)


def adam_step(state: AdamState, params: NetworkParams, grads: NetworkParams) -> tuple[AdamState, NetworkParams]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    g_list = grads.arrays()
    p_list = params.arrays()
    if len(g_list) != len(p_list) or any(g.shape != p.shape for g, p in zip(g_list, p_list)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_list):
        raise TrainingError(f"non-finite gradient at Adam step {state.t + 1}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1.0 - b1) * g for mi, g in zip(state.m, g_list)]
    v = [b2 * vi + (1.0 - b2) * g * g for vi, g in zip(state.v, g_list)]
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new = [p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps) for p, mi, vi in zip(p_list, m, v)]
    k = len(params.weights)
    new_state = AdamState(m=m, v=v, t=t, beta1=b1, beta2=b2, eps=state.eps, lr=state.lr)
    return new_state, NetworkParams(new[:k], new[k:])


# ----------------------------------------------------------------------------
# serialisation: json floats are written with repr(), which round-trips exactly


def params_to_json(params: NetworkParams, init_seed: int | None = None) -> dict:
    return {
        "architecture": params.arch.to_json(),
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "init_seed": init_seed,
    }


def params_from_json(payload: dict) -> NetworkParams:
    arch = Architecture(
        payload["architecture"]["input_dim"],
        tuple(payload["architecture"]["hidden"]),
        payload["architecture"]["output_dim"],
    )
    weights = [np.array(w, dtype=float).reshape(shape) for w, shape in zip(payload["weights"], arch.shapes)]
    biases = [np.array(b, dtype=float) for b in payload["biases"]]
    params = NetworkParams(weights, biases)
    if not params.all_finite():
        raise ValueError("model file contains non-finite parameters")
    return params


def save_params(params: NetworkParams, path: str | Path, init_seed: int | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_json(params, init_seed)) + "\n")


def load_params(path: str | Path) -> NetworkParams:
    return params_from_json(json.loads(Path(path).read_text()))
