import logging
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from models.errors import EstimationError, InvalidInputError
from models.geometry import Polytope
from models.network import Network, gradient_step, load_network, random_network
from models.schemas import ScenarioKind, ScenarioSpec, VerifyLimits
from models.verification import OutputSpec
from services.branching_service import build_store

logger = logging.getLogger(__name__)

# velocity history [v_{t-3}, v_{t-2}, v_{t-1}] and predicted [v_t, v_{t+1}, v_{t+2}], 3-D each
WINDOW = 3
AXES = 3
ROBOT_DIM = WINDOW * AXES

Problem = Tuple[Polytope, Network, OutputSpec]


def _velocity_rows(limit: float, accel: float) -> Tuple[np.ndarray, np.ndarray]:
    """``|v_i| <= limit`` for every window entry and ``|v_{i+1} - v_i| <= accel`` for adjacent entries"""
    eye = np.eye(ROBOT_DIM)
    rows = [eye, -eye]
    constants = [np.full(ROBOT_DIM, limit), np.full(ROBOT_DIM, limit)]
    diff = np.zeros((AXES * (WINDOW - 1), ROBOT_DIM))
    for j in range(WINDOW - 1):
        for k in range(AXES):
            diff[j * AXES + k, (j + 1) * AXES + k] = 1.0
            diff[j * AXES + k, j * AXES + k] = -1.0
    rows += [diff, -diff]
    constants += [np.full(len(diff), accel), np.full(len(diff), accel)]
    return np.vstack(rows), np.concatenate(constants)


def robotics_output_spec(spec: ScenarioSpec) -> OutputSpec:
    C, d = _velocity_rows(spec.params.v_y, spec.params.a_y)
    return OutputSpec(C, d)


def shift_bound(spec: ScenarioSpec, t: int) -> float:
    """Bound on the shifting components of ``v_{t-1}``; reaches ``v_x`` at the horizon"""
    p = spec.params
    return p.v_x - p.change_factor * p.shift_rate * (spec.horizon - t)


def robotics_input(spec: ScenarioSpec, t: int) -> Polytope:
    p = spec.params
    A, b = _velocity_rows(p.v_x, p.a_x)
    if spec.kind is not ScenarioKind.DOMAIN_SHIFT:
        return Polytope(A, b)
    bound = shift_bound(spec, t)
    if bound <= 0:
        raise InvalidInputError(
            f"shift bound {bound:.4f} at t={t} is not positive; lower shift_rate or change_factor"
        )
    shifting = np.arange(ROBOT_DIM - p.changing_dims, ROBOT_DIM)
    extra = np.zeros((2 * len(shifting), ROBOT_DIM))
    extra[np.arange(len(shifting)), shifting] = 1.0
    extra[len(shifting) + np.arange(len(shifting)), shifting] = -1.0
    return Polytope(np.vstack([A, extra]), np.concatenate([b, np.full(len(extra), bound)]))


def _generated_network(spec: ScenarioSpec, in_dim: int, out_dim: int, seed: int) -> Network:
    source = spec.network
    if source.file:
        net = load_network(source.file)
        if net.in_dim != in_dim or net.out_dim != out_dim:
            raise InvalidInputError(
                f"network {source.file} maps {net.in_dim} -> {net.out_dim}, scenario needs {in_dim} -> {out_dim}"
            )
        return net
    return random_network(in_dim, out_dim, source.depth, source.width, seed)


def scenario_limits(spec: ScenarioSpec, limits: VerifyLimits = None) -> VerifyLimits:
    """Limits with the scenario's branch count as the pre-split target"""
    limits = limits or VerifyLimits()
    branches = spec.params.branches
    return limits.model_copy(update={
        "min_branches": branches,
        "max_branches": max(limits.max_branches, 2 * branches),
    })


@lru_cache(maxsize=32)
def _base_network(key: str) -> Network:
    spec = ScenarioSpec.model_validate_json(key)
    if not spec.is_robotics:
        return _generated_network(spec, spec.params.n_pixels, spec.params.n_classes, spec.network.seed)
    if spec.kind is not ScenarioKind.DOMAIN_SHIFT or spec.network.file:
        return _generated_network(spec, ROBOT_DIM, ROBOT_DIM, spec.network.seed)

    region, output = robotics_input(spec, 0), robotics_output_spec(spec)
    limits = VerifyLimits(max_branches=max(64, spec.params.branches))
    best, best_coverage = None, -1.0
    for attempt in range(spec.params.precondition_attempts):
        net = random_network(ROBOT_DIM, ROBOT_DIM, spec.network.depth, spec.network.width,
                             spec.network.seed + attempt)
        try:
            store = build_store(region, net, output, limits, seed=spec.seed, coverage_samples=1000)
        except EstimationError as e:
            logger.warning(f"Seed {spec.network.seed + attempt} skipped: {e}")
            continue
        if store.origin_coverage >= spec.params.precondition_coverage:
            if attempt:
                logger.info(f"Pre-conditioned network after {attempt + 1} seeds "
                            f"(coverage {store.origin_coverage:.3f})")
            return net
        if store.origin_coverage > best_coverage:
            best, best_coverage = net, store.origin_coverage
    if best is None:
        logger.warning("Coverage could not be measured for any seed; using the first one")
        return random_network(ROBOT_DIM, ROBOT_DIM, spec.network.depth, spec.network.width, spec.network.seed)
    logger.warning(f"No seed reached coverage {spec.params.precondition_coverage}; "
                   f"using the best one ({best_coverage:.3f})")
    return best


@lru_cache(maxsize=32)
def _network_trace(key: str) -> Tuple[Network, ...]:
    """Networks for t = 0..horizon; weights move only for the update scenarios"""
    spec = ScenarioSpec.model_validate_json(key)
    net = _base_network(key)
    if spec.kind not in (ScenarioKind.NETWORK_UPDATES, ScenarioKind.FINE_TUNING):
        return (net,) * (spec.horizon + 1)
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    last_only = spec.kind is ScenarioKind.FINE_TUNING
    trace: List[Network] = [net]
    for _ in range(spec.horizon):
        x = rng.uniform(-p.v_x, p.v_x, size=(p.update_batch, net.in_dim))
        y = rng.uniform(-p.v_y, p.v_y, size=(p.update_batch, net.out_dim))
        net = gradient_step(net, x, y, p.learning_rate * p.change_factor, last_layer_only=last_only)
        trace.append(net)
    logger.info(f"Generated {spec.horizon} {spec.kind.value} weight updates")
    return tuple(trace)


def scenario_network(spec: ScenarioSpec, t: int) -> Network:
    if not 0 <= t <= spec.horizon:
        raise InvalidInputError(f"time index {t} outside 0..{spec.horizon}")
    return _network_trace(spec.cache_key())[t]


def gen_robotics_scenario(spec: ScenarioSpec, t: int) -> Problem:
    """Input set, network and output set of the velocity-prediction task at time ``t``"""
    if not spec.is_robotics:
        raise InvalidInputError(f"'{spec.kind.value}' is not a robotics scenario")
    return robotics_input(spec, t), scenario_network(spec, t), robotics_output_spec(spec)


def base_image(spec: ScenarioSpec) -> np.ndarray:
    return np.random.default_rng(spec.seed).uniform(0.0, 1.0, spec.params.n_pixels)


def dimming_input(spec: ScenarioSpec, t: int) -> Polytope:
    p = spec.params
    dimmed = base_image(spec) - t * p.dim_rate
    lo = np.clip(dimmed - p.radius, 0.0, 1.0)
    hi = np.clip(dimmed + p.radius, 0.0, 1.0)
    eye = np.eye(p.n_pixels)
    return Polytope(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))


def robustness_spec(net: Network, image: np.ndarray) -> OutputSpec:
    """``y_wrong - y_correct <= 0`` for every class other than the predicted one"""
    correct = int(np.argmax(net.forward(image)))
    eye = np.eye(net.out_dim)
    rows = [(eye[j] - eye[correct], 0.0) for j in range(net.out_dim) if j != correct]
    return OutputSpec.from_rows(rows)


def gen_dimming_scenario(spec: ScenarioSpec, t: int) -> Problem:
    """Small classifier whose input image darkens by ``dim_rate`` per step"""
    if spec.kind is not ScenarioKind.DIMMING:
        raise InvalidInputError(f"'{spec.kind.value}' is not a dimming scenario")
    net = scenario_network(spec, t)
    return dimming_input(spec, t), net, robustness_spec(net, base_image(spec))


def generate(spec: ScenarioSpec, t: int) -> Problem:
    if spec.kind is ScenarioKind.DIMMING:
        return gen_dimming_scenario(spec, t)
    return gen_robotics_scenario(spec, t)


def generate_all(spec: ScenarioSpec, horizon: int = None) -> List[Problem]:
    horizon = spec.horizon if horizon is None else min(horizon, spec.horizon)
    return [generate(spec, t) for t in range(horizon + 1)]
