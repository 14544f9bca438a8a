import json

import numpy as np
import pytest

from models.network import Activation, Layer, Network, random_network
from models.schemas import ScenarioSpec


def abs_network(scale: float = 1.0, bias: float = 0.0) -> Network:
    """``f(x) = scale * (relu(x) + relu(-x)) + bias``"""
    return Network((
        Layer([[1.0], [-1.0]], [0.0, 0.0], Activation.RELU),
        Layer([[scale, scale]], [bias], Activation.LINEAR),
    ))


@pytest.fixture
def abs_net() -> Network:
    return abs_network()


@pytest.fixture
def identity_net() -> Network:
    return Network((Layer(np.eye(2), np.zeros(2), Activation.LINEAR),))


@pytest.fixture
def small_net() -> Network:
    return random_network(3, 2, depth=3, width=6, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def tiny_scenario(kind: str = "domain_shift", **params) -> ScenarioSpec:
    """Scenario small enough for unit tests: 2-layer, 8-wide network, 4 branches, 4 steps"""
    base = {"branches": 4, "precondition_attempts": 2}
    base.update(params)
    return ScenarioSpec.model_validate({
        "kind": kind,
        "horizon": 4,
        "network": {"depth": 2, "width": 8, "seed": 0},
        "params": base,
    })


@pytest.fixture
def write_scenario(tmp_path):
    def write(data, name: str = "scenario.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path
    return write
