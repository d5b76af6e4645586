"""Feedforward barrier network: forward pass, analytic derivatives,
activation-set algebra for ReLU nets, and JSON serialization.

Smooth activations (softplus, tanh) expose analytic first/second/third
derivatives so the generator and Lipschitz-certificate machinery can be
assembled without autodiff.  ReLU nets expose the activation-set view:
each full activation pattern indexes one affine piece of the network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MODEL_FORMAT_VERSION = 1


class NnError(Exception):
    pass


class NonsmoothPoint(NnError):
    """Jacobian requested at a ReLU hyperplane boundary."""


# -- activations ------------------------------------------------------------


def _softplus(z):
    return np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACTS = {
    "relu": {
        "f": lambda z: np.maximum(z, 0.0),
        "d1": lambda z: (z > 0.0).astype(float),
    },
    "softplus": {
        "f": _softplus,
        "d1": _sigmoid,
        "d2": lambda z: _sigmoid(z) * (1.0 - _sigmoid(z)),
        "d3": lambda z: _sigmoid(z) * (1.0 - _sigmoid(z)) * (1.0 - 2.0 * _sigmoid(z)),
    },
    "tanh": {
        "f": np.tanh,
        "d1": lambda z: 1.0 - np.tanh(z) ** 2,
        "d2": lambda z: -2.0 * np.tanh(z) * (1.0 - np.tanh(z) ** 2),
        "d3": lambda z: (1.0 - np.tanh(z) ** 2) * (6.0 * np.tanh(z) ** 2 - 2.0),
    },
}

SMOOTH_ACTIVATIONS = ("softplus", "tanh")


def activation_fns(name: str) -> dict:
    try:
        return _ACTS[name]
    except KeyError:
        raise NnError(f"unknown activation {name!r}") from None


@dataclass
class Mlp:
    """Feedforward net with scalar output.

    weights[i] has shape (layer_sizes[i+1], layer_sizes[i]); biases[i] has
    shape (layer_sizes[i+1],).  The final layer is linear.
    """

    weights: list
    biases: list
    activation: str

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if self.activation not in _ACTS:
            raise NnError(f"unknown activation {self.activation!r}")
        if self.weights[-1].shape[0] != 1:
            raise NnError("output dimension must be 1")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise NnError("weight/bias shape mismatch")

    @property
    def n_x(self) -> int:
        return self.weights[0].shape[1]

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def single_hidden(self) -> bool:
        return len(self.weights) == 2

    def hidden_preact(self, x) -> np.ndarray:
        """First-layer pre-activations z = W1 x + r1 (single point or batch)."""
        x = np.asarray(x, dtype=float)
        return x @ self.weights[0].T + self.biases[0]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


def init_mlp(
    layer_sizes: Sequence[int], activation: str, seed: int = 0
) -> Mlp:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(ws, bs, activation)


def forward(net: Mlp, x) -> float:
    """Network output B(x) at a single point."""
    a = np.asarray(x, dtype=float)
    act = _ACTS[net.activation]["f"]
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = act(w @ a + b)
    return float((net.weights[-1] @ a + net.biases[-1])[0])


def forward_batch(net: Mlp, xs: np.ndarray) -> np.ndarray:
    """Vectorized forward pass over rows of ``xs``."""
    a = np.asarray(xs, dtype=float)
    act = _ACTS[net.activation]["f"]
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = act(a @ w.T + b)
    return (a @ net.weights[-1].T + net.biases[-1]).ravel()


def jacobian(net: Mlp, x) -> np.ndarray:
    """Analytic gradient dB/dx as a length-n_x vector.

    For ReLU nets the point must lie strictly off every hyperplane.
    """
    x = np.asarray(x, dtype=float)
    act = _ACTS[net.activation]
    a = x
    d1s = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = w @ a + b
        if net.activation == "relu" and np.any(z == 0.0):
            raise NonsmoothPoint(f"pre-activation exactly zero at {x}")
        d1s.append(act["d1"](z))
        a = act["f"](z)
    grad = net.weights[-1].copy()  # 1 x M
    for w, d1 in zip(reversed(net.weights[:-1]), reversed(d1s)):
        grad = (grad * d1) @ w
    return grad.ravel()


def hessian(net: Mlp, x) -> np.ndarray:
    """Analytic Hessian d2B/dx2 (smooth activations only).

    Single hidden layer uses the closed form sum_j W2_j sigma''(z_j) W1_j W1_j^T;
    deeper nets propagate tangents through the forward and reverse passes
    (forward-over-reverse), one tangent direction per state coordinate.
    """
    if net.activation == "relu":
        raise NnError("hessian unsupported for relu")
    x = np.asarray(x, dtype=float)
    act = _ACTS[net.activation]
    if net.single_hidden:
        w1, w2 = net.weights[0], net.weights[1].ravel()
        z = w1 @ x + net.biases[0]
        d2 = act["d2"](z)
        return (w1.T * (w2 * d2)) @ w1
    n = len(x)
    # Forward pass with tangents da/dx (n directions at once).
    a = x
    ta = np.eye(n)  # columns: tangent of a wrt each x_i
    d1s, td1s = [], []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = w @ a + b
        tz = w @ ta
        d1 = act["d1"](z)
        d2 = act["d2"](z)
        d1s.append(d1)
        td1s.append(d2[:, None] * tz)
        a = act["f"](z)
        ta = d1[:, None] * tz
    # Reverse pass with tangents of the gradient.
    g = net.weights[-1].copy()  # 1 x M
    tg = np.zeros((n, g.shape[1]))  # per-direction tangent of g
    for w, d1, td1 in zip(reversed(net.weights[:-1]), reversed(d1s), reversed(td1s)):
        new_g = (g * d1) @ w
        tg = (tg * d1 + g * td1.T) @ w
        g = new_g
    H = tg  # row i is d(grad)/dx_i
    return 0.5 * (H + H.T)


def hessian_trace_term(net: Mlp, x, V: np.ndarray) -> float:
    """0.5 * tr(V^T d2B/dx2 V) at a point."""
    H = hessian(net, x)
    return 0.5 * float(np.trace(V.T @ H @ V))


# -- ReLU activation-set algebra -------------------------------------------


def activation_set(net: Mlp, x) -> tuple:
    """Per-hidden-layer bitmask of activated neurons; z = 0 counts inactive."""
    if net.activation != "relu":
        raise NnError("activation_set requires a relu net")
    a = np.asarray(x, dtype=float)
    masks = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = w @ a + b
        mask = 0
        for j, zj in enumerate(z):
            if zj > 0.0:
                mask |= 1 << j
        masks.append(mask)
        a = np.maximum(z, 0.0)
    return tuple(masks)


def activation_sets_batch(net: Mlp, xs: np.ndarray) -> list:
    """activation_set for each row of ``xs`` (single hidden layer)."""
    if not net.single_hidden:
        raise NnError("batch activation sets implemented for single hidden layer")
    z = net.hidden_preact(xs)
    powers = 1 << np.arange(z.shape[1])
    masks = ((z > 0.0) * powers).sum(axis=1)
    return [(int(m),) for m in masks]


@dataclass(frozen=True)
class RegionLinearForm:
    """Affine restriction of a ReLU net: B(x) = w . x + r on the region."""

    w: np.ndarray
    r: float


def region_linear_form(net: Mlp, S: tuple) -> RegionLinearForm:
    """Effective weights of the affine piece indexed by activation set S."""
    if net.activation != "relu":
        raise NnError("region_linear_form requires a relu net")
    if not net.single_hidden:
        raise NnError("region_linear_form implemented for single hidden layer")
    mask = S[0]
    w1, r1 = net.weights[0], net.biases[0]
    w2, r2 = net.weights[1].ravel(), float(net.biases[1][0])
    M = w1.shape[0]
    on = np.array([(mask >> j) & 1 for j in range(M)], dtype=float)
    w = (w2 * on) @ w1
    r = float((w2 * on) @ r1 + r2)
    return RegionLinearForm(np.asarray(w, dtype=float), r)


# -- serialization ----------------------------------------------------------


def to_dict(net: Mlp) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def from_dict(d: dict) -> Mlp:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise NnError(f"unsupported model format version {d.get('format_version')}")
    net = Mlp(
        [np.array(w, dtype=float) for w in d["weights"]],
        [np.array(b, dtype=float) for b in d["biases"]],
        d["activation"],
    )
    if net.layer_sizes != list(d["layer_sizes"]):
        raise NnError("layer_sizes inconsistent with weight shapes")
    return net


def save(net: Mlp, path: str):
    with open(path, "w") as fh:
        json.dump(to_dict(net), fh, indent=1)


def load(path: str) -> Mlp:
    with open(path) as fh:
        return from_dict(json.load(fh))
