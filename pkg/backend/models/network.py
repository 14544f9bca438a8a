import json
import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from models.errors import InvalidInputError, ScenarioParseError

logger = logging.getLogger(__name__)


class Activation(str, Enum):
    RELU = "relu"
    LINEAR = "linear"


def _matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    return np.maximum(z, 0.0) if activation is Activation.RELU else z


@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map followed by an activation: ``z -> sigma(W z + b)``"""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        weights = _matrix(self.weights, "weights")
        bias = _vector(self.bias, "bias")
        if bias.size != weights.shape[0]:
            raise InvalidInputError(f"bias has {bias.size} entries for {weights.shape[0]} neurons")
        try:
            activation = Activation(self.activation)
        except ValueError:
            raise InvalidInputError(f"unsupported activation '{self.activation}'")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def augmented(self) -> np.ndarray:
        """``[W | b]``, the matrix the weight metrics are measured on"""
        return np.hstack([self.weights, self.bias[:, None]])

    def apply(self, z: np.ndarray) -> np.ndarray:
        return _activate(z @ self.weights.T + self.bias, self.activation)

    def equals(self, other: "Layer") -> bool:
        if self is other:
            return True
        return (self.activation is other.activation
                and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))

    def to_dict(self) -> Dict[str, Any]:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(), "activation": self.activation.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Layer":
        try:
            return cls(data["weights"], data["bias"], data.get("activation", "relu"))
        except KeyError as e:
            raise InvalidInputError(f"layer record is missing field {e}")


@dataclass(frozen=True, eq=False)
class Network:
    """Feedforward network; hidden layers are ReLU, the last layer may be linear"""

    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidInputError("network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise InvalidInputError(
                    f"layer {i} expects {layers[i].in_dim} inputs but layer {i - 1} produces {layers[i - 1].out_dim}"
                )
            if layers[i - 1].activation is not Activation.RELU:
                raise InvalidInputError(f"hidden layer {i - 1} must use relu")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def architecture(self) -> List[Tuple[int, int, str]]:
        return [(layer.out_dim, layer.in_dim, layer.activation.value) for layer in self.layers]

    def forward(self, x) -> np.ndarray:
        """Evaluate one input vector or a batch of row vectors"""
        z = np.asarray(x, dtype=np.float64)
        if z.shape[-1] != self.in_dim:
            raise InvalidInputError(f"input has dimension {z.shape[-1]}, expected {self.in_dim}")
        for layer in self.layers:
            z = layer.apply(z)
        return z

    def equals(self, other: "Network") -> bool:
        if self is other:
            return True
        return self.depth == other.depth and all(a.equals(b) for a, b in zip(self.layers, other.layers))

    def prefix_equals(self, other: "Network", n_layers: int) -> bool:
        """True iff the first ``n_layers`` layers are identical"""
        if self.depth != other.depth:
            return False
        return all(a.equals(b) for a, b in zip(self.layers[:n_layers], other.layers[:n_layers]))

    def with_last_layer(self, layer: Layer) -> "Network":
        return Network(self.layers[:-1] + (layer,))

    def to_module(self) -> nn.Sequential:
        """float64 torch view of the network (a fresh copy of the parameters)"""
        modules = []
        for layer in self.layers:
            linear = nn.Linear(layer.in_dim, layer.out_dim).double()
            with torch.no_grad():
                linear.weight.copy_(torch.from_numpy(np.array(layer.weights)))
                linear.bias.copy_(torch.from_numpy(np.array(layer.bias)))
            modules.append(linear)
            if layer.activation is Activation.RELU:
                modules.append(nn.ReLU())
        return nn.Sequential(*modules)

    def to_dict(self) -> Dict[str, Any]:
        return {"layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Network":
        if not isinstance(data, dict) or "layers" not in data:
            raise InvalidInputError("network record needs a 'layers' list")
        return cls(tuple(Layer.from_dict(layer) for layer in data["layers"]))


def forward(net: Network, x) -> np.ndarray:
    return net.forward(x)


@dataclass(frozen=True, eq=False)
class LayerDiff:
    """One non-negative infinity-norm weight distance per layer"""

    per_layer: np.ndarray

    def __post_init__(self):
        values = _vector(self.per_layer, "per_layer")
        if np.any(values < 0):
            raise InvalidInputError("layer differences must be non-negative")
        object.__setattr__(self, "per_layer", values)

    def __len__(self):
        return self.per_layer.size

    def scaled(self, factor: float) -> "LayerDiff":
        return LayerDiff(self.per_layer * factor)

    def maximum(self, other: "LayerDiff") -> "LayerDiff":
        if len(other) != len(self):
            raise InvalidInputError("layer differences cover different depths")
        return LayerDiff(np.maximum(self.per_layer, other.per_layer))

    def within(self, other: "LayerDiff") -> bool:
        return len(other) == len(self) and bool(np.all(self.per_layer <= other.per_layer))

    def to_list(self) -> List[float]:
        return self.per_layer.tolist()


def _check_same_architecture(net_a: Network, net_b: Network):
    if net_a.architecture != net_b.architecture:
        raise InvalidInputError(f"architecture mismatch: {net_a.architecture} vs {net_b.architecture}")


def layerwise_diff(net_a: Network, net_b: Network) -> LayerDiff:
    """Max absolute row sum of ``[W | b]`` differences, layer by layer"""
    _check_same_architecture(net_a, net_b)
    return LayerDiff([
        float(np.abs(a.augmented - b.augmented).sum(axis=1).max())
        for a, b in zip(net_a.layers, net_b.layers)
    ])


def max_step_diff(trace: Sequence[Network]) -> LayerDiff:
    if len(trace) < 2:
        raise InvalidInputError("a weight trace needs at least two networks")
    result = layerwise_diff(trace[0], trace[1])
    for prev, cur in zip(trace[1:], trace[2:]):
        result = result.maximum(layerwise_diff(prev, cur))
    return result


def gradient_step(net: Network, x, y_target, lr: float, last_layer_only: bool = False) -> Network:
    """One step of gradient descent on ``||f(x) - y_target||^2``.

    Args:
        net: current network
        x: input vector or batch of row vectors
        y_target: target output(s) matching ``x``
        lr: learning rate, must be positive
        last_layer_only: freeze every layer except the output layer

    Returns:
        A new network; frozen layers are the original ``Layer`` objects
    """
    if lr <= 0:
        raise InvalidInputError(f"learning rate must be positive, got {lr}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y_target = np.atleast_2d(np.asarray(y_target, dtype=np.float64))
    if x.shape[1] != net.in_dim or y_target.shape != (x.shape[0], net.out_dim):
        raise InvalidInputError(f"gradient step shapes do not match the network: {x.shape}, {y_target.shape}")

    module = net.to_module()
    linears = [m for m in module if isinstance(m, nn.Linear)]
    trainable = linears[-1:] if last_layer_only else linears
    for linear in linears:
        linear.requires_grad_(linear in trainable)

    loss = ((module(torch.from_numpy(x)) - torch.from_numpy(y_target)) ** 2).sum()
    loss.backward()

    layers = list(net.layers)
    with torch.no_grad():
        for i, (linear, layer) in enumerate(zip(linears, net.layers)):
            if linear not in trainable:
                continue
            layers[i] = Layer(
                (linear.weight - lr * linear.weight.grad).numpy(),
                (linear.bias - lr * linear.bias.grad).numpy(),
                layer.activation,
            )
    return Network(tuple(layers))


@dataclass(frozen=True, eq=False)
class IntervalLayer:
    """Layer whose weights and bias are closed intervals"""

    weights_lo: np.ndarray
    weights_hi: np.ndarray
    bias_lo: np.ndarray
    bias_hi: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        weights_lo = _matrix(self.weights_lo, "weights_lo")
        weights_hi = _matrix(self.weights_hi, "weights_hi")
        bias_lo = _vector(self.bias_lo, "bias_lo")
        bias_hi = _vector(self.bias_hi, "bias_hi")
        if weights_lo.shape != weights_hi.shape or bias_lo.shape != bias_hi.shape:
            raise InvalidInputError("interval bounds have mismatched shapes")
        if bias_lo.size != weights_lo.shape[0]:
            raise InvalidInputError("interval bias does not match the neuron count")
        if np.any(weights_lo > weights_hi) or np.any(bias_lo > bias_hi):
            raise InvalidInputError("interval layer has inverted bounds")
        object.__setattr__(self, "weights_lo", weights_lo)
        object.__setattr__(self, "weights_hi", weights_hi)
        object.__setattr__(self, "bias_lo", bias_lo)
        object.__setattr__(self, "bias_hi", bias_hi)
        object.__setattr__(self, "activation", Activation(self.activation))

    @classmethod
    def around(cls, layer: Layer, radius: float = 0.0) -> "IntervalLayer":
        return cls(layer.weights - radius, layer.weights + radius,
                   layer.bias - radius, layer.bias + radius, layer.activation)

    @property
    def in_dim(self) -> int:
        return self.weights_lo.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights_lo.shape[0]

    def contains(self, layer: Layer) -> bool:
        if layer.weights.shape != self.weights_lo.shape or layer.activation is not self.activation:
            raise InvalidInputError("layer does not match the interval layer's shape")
        return bool(
            np.all((self.weights_lo <= layer.weights) & (layer.weights <= self.weights_hi))
            and np.all((self.bias_lo <= layer.bias) & (layer.bias <= self.bias_hi))
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weights_lo": self.weights_lo.tolist(),
            "weights_hi": self.weights_hi.tolist(),
            "bias_lo": self.bias_lo.tolist(),
            "bias_hi": self.bias_hi.tolist(),
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IntervalLayer":
        try:
            return cls(data["weights_lo"], data["weights_hi"], data["bias_lo"], data["bias_hi"],
                       data.get("activation", "relu"))
        except KeyError as e:
            raise InvalidInputError(f"interval layer record is missing field {e}")


@dataclass(frozen=True, eq=False)
class IntervalNetwork:
    layers: Tuple[IntervalLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidInputError("interval network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise InvalidInputError(f"interval layer {i} does not chain with layer {i - 1}")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def to_dict(self) -> Dict[str, Any]:
        return {"layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IntervalNetwork":
        return cls(tuple(IntervalLayer.from_dict(layer) for layer in data["layers"]))


def build_inn(net: Network, radius: LayerDiff) -> IntervalNetwork:
    """Interval network centred on ``net`` with one uniform radius per layer"""
    if len(radius) != net.depth:
        raise InvalidInputError(f"radius has {len(radius)} entries for {net.depth} layers")
    return IntervalNetwork(tuple(
        IntervalLayer.around(layer, float(r)) for layer, r in zip(net.layers, radius.per_layer)
    ))


def inn_contains(inn: IntervalNetwork, net: Network) -> bool:
    if inn.depth != net.depth:
        raise InvalidInputError(f"interval network has {inn.depth} layers, network has {net.depth}")
    return all(ilayer.contains(layer) for ilayer, layer in zip(inn.layers, net.layers))


@dataclass(frozen=True)
class LipschitzBound:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidInputError(f"Lipschitz bound must be non-negative, got {self.value}")


def lipschitz_upper(net: Network) -> LipschitzBound:
    """Product of operator infinity-norms; ReLU is 1-Lipschitz so this bounds the whole map"""
    value = 1.0
    for layer in net.layers:
        value *= float(np.abs(layer.weights).sum(axis=1).max())
    return LipschitzBound(value)


def random_network(in_dim: int, out_dim: int, depth: int, width: int, seed: int = 0,
                   output_activation: Union[str, Activation] = Activation.LINEAR) -> Network:
    """Random network with ``depth`` affine layers and entries uniform in +-1/sqrt(fan_in)"""
    if min(in_dim, out_dim, depth, width) < 1:
        raise InvalidInputError("network dimensions, depth and width must be positive")
    rng = np.random.default_rng(seed)
    sizes = [in_dim] + [width] * (depth - 1) + [out_dim]
    layers = []
    for i in range(depth):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        scale = 1.0 / np.sqrt(fan_in)
        activation = Activation.RELU if i < depth - 1 else Activation(output_activation)
        layers.append(Layer(
            rng.uniform(-scale, scale, size=(fan_out, fan_in)),
            rng.uniform(-scale, scale, size=fan_out),
            activation,
        ))
    return Network(tuple(layers))


def load_network(path: Union[str, Path]) -> Network:
    """Read a network JSON file; parse problems carry the file position"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ScenarioParseError(str(path), e.msg, line=e.lineno)
    except OSError as e:
        raise ScenarioParseError(str(path), f"cannot read file: {e}")
    try:
        return Network.from_dict(data)
    except InvalidInputError as e:
        raise ScenarioParseError(str(path), str(e), field="layers")


def save_network(net: Network, path: Union[str, Path]):
    Path(path).write_text(json.dumps(net.to_dict()), encoding="utf-8")
    logger.info(f"Saved network with {net.depth} layers to {path}")
