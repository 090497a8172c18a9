"""Small fully connected network with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(n, input_dim)`` goes through ``X @ W + b``.  Hidden layers use ReLU, the
output layer is linear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...] = (128, 128)
    output_dim: int = 6
    activation: str = "relu"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


class NetworkParams:
    """Per-layer weights and biases, all stored as views into one flat buffer."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        layout, pos = [], 0
        for w, b in zip(weights, biases):
            ws, bs = tuple(np.shape(w)), tuple(np.shape(b))
            nw, nb = math.prod(ws), math.prod(bs)
            layout.append((pos, ws, pos + nw, bs, pos + nw + nb))
            pos += nw + nb
        self._layout = tuple(layout)
        self.flat = np.empty(pos)
        self._bind()
        for dst, src in zip(self.arrays(), [a for pair in zip(weights, biases) for a in pair]):
            dst[...] = src

    def _bind(self) -> None:
        f = self.flat
        self.weights = [f[a:b].reshape(ws) for a, ws, b, _, _ in self._layout]
        self.biases = [f[b:c].reshape(bs) for _, _, b, bs, c in self._layout]

    @classmethod
    def from_flat(cls, flat: np.ndarray, like: "NetworkParams") -> "NetworkParams":
        out = cls.__new__(cls)
        out.flat = flat
        out._layout = like._layout
        out._bind()
        return out

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_flat(self.flat.copy(), self)

    def assign(self, other: "NetworkParams") -> None:
        """Copy ``other``'s values into this buffer in place."""
        self.flat[...] = other.flat

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams.from_flat(np.zeros_like(self.flat), self)

    def __eq__(self, other) -> bool:
        return isinstance(other, NetworkParams) and np.array_equal(self.flat, other.flat) and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays()))

    def __repr__(self) -> str:
        return f"NetworkParams(layers={[w.shape for w in self.weights]})"

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetworkParams(weights, biases)


def _check_input(params: NetworkParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.input_dim}")


def forward(params: NetworkParams, x: np.ndarray, *, keep_activations: bool = False):
    """Evaluate the network on one input vector or a batch of row vectors.

    With ``keep_activations`` the per-layer inputs are returned as well, for
    reuse in :func:`backward`.
    """
    x = np.asarray(x, dtype=float)
    _check_input(params, x)
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    if keep_activations:
        return h, acts
    return h


def backward(params: NetworkParams, x: np.ndarray, output_gradient: np.ndarray,
             activations: list[np.ndarray] | None = None) -> NetworkParams:
    """Gradients of a scalar loss given ``d loss / d output``.

    For a batch, ``output_gradient`` has one row per input and the returned
    gradients are summed over the batch.
    """
    if activations is None:
        _, activations = forward(params, x, keep_activations=True)
    g = np.asarray(output_gradient, dtype=float)
    if g.shape[-1] != params.output_dim or g.ndim != activations[0].ndim:
        raise ValueError(f"output gradient shape {g.shape} does not match network output")
    grads = params.zeros_like()
    for i in range(len(params.weights) - 1, -1, -1):
        a = activations[i]
        if g.ndim == 1:
            np.multiply.outer(a, g, out=grads.weights[i])
            grads.biases[i][...] = g
        else:
            np.matmul(a.T, g, out=grads.weights[i])
            np.sum(g, axis=0, out=grads.biases[i])
        if i > 0:
            g = (g @ params.weights[i].T) * (a > 0)
    return grads


def global_norm(grads: NetworkParams) -> float:
    return float(np.sqrt(grads.flat @ grads.flat))


def clip_by_global_norm(grads: NetworkParams, max_norm: float) -> NetworkParams:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads.flat *= scale
    return grads


def _check_finite(grads: NetworkParams) -> None:
    if not np.isfinite(grads.flat @ grads.flat):
        raise FloatingPointError("non-finite gradient passed to optimizer")


def sgd_step(params: NetworkParams, gradients: NetworkParams, learning_rate: float) -> NetworkParams:
    """Plain gradient descent; returns new parameters and leaves ``params`` untouched."""
    _check_finite(gradients)
    return NetworkParams.from_flat(params.flat - learning_rate * gradients.flat, params)


@dataclass
class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _m: np.ndarray | None = field(default=None, repr=False)
    _v: np.ndarray | None = field(default=None, repr=False)

    def step(self, params: NetworkParams, gradients: NetworkParams) -> NetworkParams:
        _check_finite(gradients)
        g = gradients.flat
        if self._m is None:
            self._m = np.zeros_like(params.flat)
            self._v = np.zeros_like(params.flat)
        m, v = self._m, self._v
        self.t += 1
        lr_t = self.learning_rate * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        m *= self.beta1
        m += (1 - self.beta1) * g
        if self.t % 1000 == 0:
            # Moments of long-idle units decay into subnormals, which slow every later op.
            m[np.abs(m) < 1e-200] = 0.0
        v *= self.beta2
        v += (1 - self.beta2) * (g * g)
        denom = np.sqrt(v)
        denom += self.eps
        params.flat -= lr_t * m / denom
        return params


def params_to_json(params: NetworkParams) -> dict:
    layers = []
    for w, b in zip(params.weights, params.biases):
        layers.append({"weight_shape": list(w.shape), "weight": w.ravel().tolist(),
                       "bias_shape": list(b.shape), "bias": b.tolist()})
    return {"layers": layers}


def params_from_json(data: dict) -> NetworkParams:
    weights, biases = [], []
    for layer in data["layers"]:
        weights.append(np.array(layer["weight"], dtype=float).reshape(layer["weight_shape"]))
        biases.append(np.array(layer["bias"], dtype=float).reshape(layer["bias_shape"]))
    return NetworkParams(weights, biases)


def save_params(params: NetworkParams, path: str | Path) -> None:
    """Write parameters as JSON; Python float reprs make the round trip bit-exact."""
    Path(path).write_text(json.dumps(params_to_json(params)))


def load_params(path: str | Path) -> NetworkParams:
    return params_from_json(json.loads(Path(path).read_text()))
