"""Dense feed-forward ReLU networks.

A network is a chain of fully connected layers; every hidden layer applies
ReLU, the final layer is purely affine.  Weight matrices follow the
row-per-output-node convention: ``weights[j, k]`` connects node ``k`` of the
previous layer to node ``j`` of the current one.

Networks are immutable after construction (the underlying arrays are marked
read-only), so all operations here are pure and thread-safe.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Input or parameter dimensions do not match the network."""


class NetworkFormatError(ValueError):
    """A network file violates the expected schema or its invariants."""


def _frozen_array(values, dtype=np.float64, ndim=None, name="array"):
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Layer:
    """One dense layer: ``z = weights @ x_prev + bias``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights, ndim=2, name="weights"))
        object.__setattr__(self, "bias", _frozen_array(self.bias, ndim=1, name="bias"))
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"{self.weights.shape[0]} weight rows"
            )

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


class Network:
    """Feed-forward ReLU network: hidden layers ReLU, last layer affine."""

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i + 1} expects {layers[i].in_dim} inputs but layer "
                    f"{i} produces {layers[i - 1].out_dim}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_hidden(self) -> int:
        """Number of hidden (ReLU) layers."""
        return len(self.layers) - 1

    @property
    def dims(self) -> tuple:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self):
        return f"Network(dims={'-'.join(map(str, self.dims))})"


@dataclass(frozen=True)
class ActivationTrace:
    """Hidden-layer activation record for one input.

    ``pre[i]``/``post[i]``/``pattern[i]`` are the pre-activations, ReLU
    outputs and on/off pattern of hidden layer ``i+1``; ties (pre-activation
    exactly 0) are recorded as active.
    """

    pre: tuple
    post: tuple
    pattern: tuple
    output: np.ndarray


@dataclass(frozen=True)
class IntervalBox:
    """Axis-aligned box ``lower <= v <= upper`` (elementwise)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ShapeError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("empty box: lower > upper somewhere")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, v, atol=0.0) -> bool:
        v = np.asarray(v, dtype=np.float64)
        return bool(np.all(v >= self.lower - atol) and np.all(v <= self.upper + atol))


@dataclass(frozen=True)
class LayerBox:
    """Per-entry intervals around one layer's weights and bias (1-based index)."""

    index: int
    w_lower: np.ndarray
    w_upper: np.ndarray
    b_lower: np.ndarray
    b_upper: np.ndarray


def _check_input(net: Network, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (net.input_dim,):
        raise ShapeError(f"expected input of shape ({net.input_dim},), got {x0.shape}")
    return x0


def forward(net: Network, x0) -> np.ndarray:
    """Evaluate the network on one input vector."""
    x = _check_input(net, x0)
    for layer in net.layers[:-1]:
        x = np.maximum(0.0, layer.weights @ x + layer.bias)
    last = net.layers[-1]
    return last.weights @ x + last.bias


def forward_batch(net: Network, X) -> np.ndarray:
    """Evaluate the network on rows of ``X`` (shape (N, input_dim))."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"expected (N, {net.input_dim}) inputs, got {X.shape}")
    A = X.T
    for layer in net.layers[:-1]:
        A = np.maximum(0.0, layer.weights @ A + layer.bias[:, None])
    last = net.layers[-1]
    return (last.weights @ A + last.bias[:, None]).T


def trace(net: Network, x0) -> ActivationTrace:
    """Evaluate the network recording hidden pre/post activations and pattern."""
    x = _check_input(net, x0)
    pre, post, pattern = [], [], []
    for layer in net.layers[:-1]:
        z = layer.weights @ x + layer.bias
        x = np.maximum(0.0, z)
        pre.append(z)
        post.append(x)
        pattern.append(z >= 0.0)
    last = net.layers[-1]
    y = last.weights @ x + last.bias
    return ActivationTrace(tuple(pre), tuple(post), tuple(pattern), y)


def _interval_affine(w_lo, w_hi, b_lo, b_hi, x_lo, x_hi):
    # Elementwise product interval of [w_lo,w_hi] * [x_lo,x_hi], summed per row.
    cands = np.stack(
        [
            w_lo * x_lo[None, :],
            w_lo * x_hi[None, :],
            w_hi * x_lo[None, :],
            w_hi * x_hi[None, :],
        ]
    )
    lo = cands.min(axis=0).sum(axis=1) + b_lo
    hi = cands.max(axis=0).sum(axis=1) + b_hi
    return lo, hi


def propagate_bounds(net: Network, input_box: IntervalBox, weight_box: LayerBox | None = None):
    """Sound interval bounds on every layer's pre-activations.

    Returns one :class:`IntervalBox` per layer (hidden layers first, output
    layer last) containing all reachable pre-activation vectors for inputs in
    ``input_box``.  If ``weight_box`` is given, that layer's weights and bias
    range over the supplied per-entry intervals instead of their point values.
    """
    if input_box.dim != net.input_dim:
        raise ShapeError(
            f"input box has dimension {input_box.dim}, network expects {net.input_dim}"
        )
    if weight_box is not None:
        layer = net.layers[weight_box.index - 1]
        if not (1 <= weight_box.index <= len(net.layers)):
            raise ShapeError(f"weight box index {weight_box.index} out of range")
        if weight_box.w_lower.shape != layer.weights.shape or weight_box.b_lower.shape != layer.bias.shape:
            raise ShapeError("weight box dimensions do not match the target layer")

    x_lo, x_hi = input_box.lower, input_box.upper
    boxes = []
    for i, layer in enumerate(net.layers, start=1):
        if weight_box is not None and i == weight_box.index:
            z_lo, z_hi = _interval_affine(
                weight_box.w_lower, weight_box.w_upper,
                weight_box.b_lower, weight_box.b_upper,
                x_lo, x_hi,
            )
        else:
            w = layer.weights
            z_lo, z_hi = _interval_affine(w, w, layer.bias, layer.bias, x_lo, x_hi)
        boxes.append(IntervalBox(z_lo, z_hi))
        x_lo = np.maximum(0.0, z_lo)
        x_hi = np.maximum(0.0, z_hi)
    return boxes


def random_network(dims, seed=None, rng=None, weight_scale=None) -> Network:
    """He-initialized random network with the given layer widths."""
    if rng is None:
        rng = np.random.default_rng(seed)
    dims = list(dims)
    if len(dims) < 2:
        raise ShapeError("need at least input and output widths")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = weight_scale if weight_scale is not None else np.sqrt(2.0 / fan_in)
        W = rng.normal(0.0, scale, size=(fan_out, fan_in))
        b = rng.normal(0.0, 0.1 * scale, size=fan_out)
        layers.append(Layer(W, b))
    return Network(layers)


def replace_layer(net: Network, layer_index: int, weights, bias) -> Network:
    """Copy of ``net`` with layer ``layer_index`` (1-based) replaced."""
    if not (1 <= layer_index <= len(net.layers)):
        raise ShapeError(f"layer index {layer_index} out of range 1..{len(net.layers)}")
    old = net.layers[layer_index - 1]
    new = Layer(weights, bias)
    if new.weights.shape != old.weights.shape:
        raise ShapeError("replacement weights change the layer shape")
    layers = list(net.layers)
    layers[layer_index - 1] = new
    return Network(layers)


def save_network(net: Network, path) -> None:
    """Write the network as JSON (row-major weight matrices)."""
    doc = {
        "input_dim": net.input_dim,
        "layers": [
            {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
            for layer in net.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_network(path) -> Network:
    """Load a network written by :func:`save_network`."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "layers" not in doc or "input_dim" not in doc:
        raise NetworkFormatError(f"{path}: expected object with 'input_dim' and 'layers'")
    layers = []
    prev_width = doc["input_dim"]
    for i, spec in enumerate(doc["layers"], start=1):
        if "weights" not in spec or "bias" not in spec:
            raise NetworkFormatError(f"{path}: layer {i} is missing 'weights' or 'bias'")
        try:
            layer = Layer(spec["weights"], spec["bias"])
        except (ValueError, ShapeError) as exc:
            raise NetworkFormatError(f"{path}: layer {i}: {exc}") from exc
        if layer.in_dim != prev_width:
            raise NetworkFormatError(
                f"{path}: layer {i} expects {layer.in_dim} inputs, previous width is {prev_width}"
            )
        prev_width = layer.out_dim
        layers.append(layer)
    if not layers:
        raise NetworkFormatError(f"{path}: network has no layers")
    return Network(layers)
