import logging
from typing import Optional, Union

import numpy as np

from models.errors import InvalidInputError, InvalidStateError
from models.geometry import IntervalBox, Polytope
from models.network import Activation, IntervalLayer, IntervalNetwork, Layer, LipschitzBound, Network
from models.verification import OutputSpec, ReachResult, Status, Verdict

logger = logging.getLogger(__name__)

DEFAULT_COUNTEREXAMPLE_SAMPLES = 64
MAX_CORNER_SEARCH = 1024


def _clamp(lower: np.ndarray, upper: np.ndarray, activation: Activation) -> IntervalBox:
    if activation is Activation.RELU:
        lower = np.maximum(lower, 0.0)
        upper = np.maximum(upper, 0.0)
    return IntervalBox(lower, upper)


def propagate_layer(layer: Union[Layer, IntervalLayer], box: IntervalBox) -> IntervalBox:
    """One step of interval arithmetic through a plain or interval layer"""
    if box.dim != layer.in_dim:
        raise InvalidInputError(f"layer expects {layer.in_dim} inputs, box has dimension {box.dim}")
    lo, hi = box.lo, box.hi
    if isinstance(layer, IntervalLayer):
        products = np.stack([
            layer.weights_lo * lo, layer.weights_lo * hi,
            layer.weights_hi * lo, layer.weights_hi * hi,
        ])
        lower = products.min(axis=0).sum(axis=1) + layer.bias_lo
        upper = products.max(axis=0).sum(axis=1) + layer.bias_hi
    else:
        W = layer.weights
        positive = W >= 0
        lower = np.where(positive, W * lo, W * hi).sum(axis=1) + layer.bias
        upper = np.where(positive, W * hi, W * lo).sum(axis=1) + layer.bias
    return _clamp(lower, upper, layer.activation)


def reach_interval(net: Union[Network, IntervalNetwork], input_box: IntervalBox) -> ReachResult:
    """Layer-by-layer interval bounds; ``per_layer[0]`` is the input box itself"""
    if input_box.dim != net.in_dim:
        raise InvalidInputError(f"input box has dimension {input_box.dim}, network expects {net.in_dim}")
    boxes = [input_box]
    for layer in net.layers:
        boxes.append(propagate_layer(layer, boxes[-1]))
    return ReachResult(tuple(boxes))


def reach_inn(inn: IntervalNetwork, input_box: IntervalBox) -> ReachResult:
    """Bounds valid for every network whose weights lie inside the intervals"""
    return reach_interval(inn, input_box)


def reach_region(net: Union[Network, IntervalNetwork], region: Polytope) -> ReachResult:
    return reach_interval(net, region.box)


def reach_incremental(cached: ReachResult, new_last_layer: Union[Layer, IntervalLayer]) -> ReachResult:
    """Recompute only the final propagation from the cached penultimate box"""
    output = propagate_layer(new_last_layer, cached.penultimate)
    return ReachResult(cached.per_layer[:-1] + (output,))


def find_counterexample(net: Network, spec: OutputSpec, region: Polytope,
                        n_samples: int = DEFAULT_COUNTEREXAMPLE_SAMPLES, seed: int = 0) -> Optional[np.ndarray]:
    """Concrete input of ``region`` whose output breaks ``spec``, if the search finds one"""
    box = region.box
    candidates = []
    if 2 ** box.dim <= MAX_CORNER_SEARCH:
        candidates.append(box.corners())
    candidates.append(box.center[None, :])
    if n_samples > 0:
        candidates.append(region.sample(np.random.default_rng(seed), n_samples))
    points = np.vstack(candidates)
    points = points[region.contains_points(points)]
    if len(points) == 0:
        return None
    bad = np.flatnonzero(~spec.satisfied(net.forward(points)))
    if bad.size == 0:
        return None
    return points[bad[0]].copy()


def check(result: ReachResult, spec: OutputSpec, net: Network, input_region: Polytope,
          n_samples: int = DEFAULT_COUNTEREXAMPLE_SAMPLES, seed: int = 0) -> Verdict:
    """Hold when every margin is non-negative; otherwise search for a concrete violation"""
    if spec.out_dim != net.out_dim:
        raise InvalidInputError(f"spec expects {spec.out_dim} outputs, network produces {net.out_dim}")
    margins = spec.margins(result.output)
    if np.all(margins >= 0):
        return Verdict(Status.HOLD, margins)
    witness = find_counterexample(net, spec, input_region, n_samples, seed)
    if witness is not None:
        logger.debug(f"Counterexample found at {witness.tolist()}")
        return Verdict(Status.VIOLATED, margins, witness)
    return Verdict(Status.UNKNOWN, margins)


def lb_threshold(result: ReachResult, spec: OutputSpec, L: LipschitzBound) -> float:
    """Largest input drift the hold result tolerates: ``min_j margin_j / (||c_j||_1 L)``"""
    margins = spec.margins(result.output)
    if np.any(margins < 0):
        raise InvalidStateError("Lipschitz threshold needs a result that holds")
    norms = np.abs(spec.C).sum(axis=1)
    active = norms > 0
    if not active.any() or L.value == 0:
        return float("inf")
    return float(np.min(margins[active] / (norms[active] * L.value)))
