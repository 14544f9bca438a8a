import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import tiny_scenario
from models.errors import InvalidInputError, ScenarioParseError
from models.network import layerwise_diff, random_network, save_network
from models.schemas import VerifyLimits, load_scenario
from services.scenario_service import (
    ROBOT_DIM,
    base_image,
    dimming_input,
    gen_dimming_scenario,
    gen_robotics_scenario,
    generate,
    generate_all,
    robotics_input,
    robotics_output_spec,
    robustness_spec,
    scenario_limits,
    scenario_network,
    shift_bound,
)


class TestDomainShift:
    def test_bound_reaches_velocity_limit_at_horizon(self):
        spec = tiny_scenario()
        assert shift_bound(spec, spec.horizon) == pytest.approx(spec.params.v_x)

    def test_shift_rows_at_start(self):
        spec = tiny_scenario().with_updates(horizon=100)
        region = robotics_input(spec, 0)
        assert region.A.shape == (32, ROBOT_DIM)
        assert_allclose(region.b[-2:], [0.9, 0.9])
        assert region.A[-2, ROBOT_DIM - 1] == 1.0 and region.A[-1, ROBOT_DIM - 1] == -1.0

    def test_bound_loosens_every_step(self):
        spec = tiny_scenario().with_updates(horizon=100)
        steps = np.diff([shift_bound(spec, t) for t in range(5)])
        assert_allclose(steps, 1e-3)

    def test_origin_is_feasible(self):
        spec = tiny_scenario()
        for t in range(spec.horizon + 1):
            assert robotics_input(spec, t).contains_point(np.zeros(ROBOT_DIM))

    def test_more_changing_dims(self):
        spec = tiny_scenario(changing_dims=3)
        region = robotics_input(spec, 0)
        assert region.A.shape[0] == 36
        shifted = np.flatnonzero(np.abs(region.A[30:]).sum(axis=0))
        assert shifted.tolist() == [6, 7, 8]

    def test_non_positive_bound_is_rejected(self):
        spec = tiny_scenario(shift_rate=0.1).with_updates(horizon=50)
        with pytest.raises(InvalidInputError):
            robotics_input(spec, 0)

    def test_other_kinds_have_fixed_input(self):
        spec = tiny_scenario("network_updates")
        assert robotics_input(spec, 0).equals(robotics_input(spec, 3))
        assert robotics_input(spec, 0).A.shape == (30, ROBOT_DIM)

    def test_output_spec_rows(self):
        spec = tiny_scenario(v_y=5.0, a_y=10.0)
        out = robotics_output_spec(spec)
        assert out.n_rows == 30
        assert_allclose(out.d[:ROBOT_DIM], 5.0)
        assert_allclose(out.d[-6:], 10.0)

    def test_network_is_fixed(self):
        spec = tiny_scenario()
        assert scenario_network(spec, 0) is scenario_network(spec, spec.horizon)

    def test_pre_conditioning_measures_coverage(self, caplog):
        spec = tiny_scenario(v_y=50.0, a_y=100.0, branches=8)
        with caplog.at_level(logging.WARNING, logger="services.scenario_service"):
            net = scenario_network(spec, 0)
        assert net.in_dim == ROBOT_DIM
        assert caplog.text == ""

    def test_pre_conditioning_without_target_keeps_first_seed(self):
        spec = tiny_scenario(precondition_coverage=0.0)
        assert scenario_network(spec, 0).equals(random_network(ROBOT_DIM, ROBOT_DIM, 2, 8, seed=0))


class TestWeightUpdates:
    def test_network_updates_move_every_layer(self):
        spec = tiny_scenario("network_updates")
        diff = layerwise_diff(scenario_network(spec, 0), scenario_network(spec, 1)).per_layer
        assert np.all(diff > 0)

    def test_fine_tuning_moves_only_the_last_layer(self):
        spec = tiny_scenario("fine_tuning")
        for t in range(spec.horizon):
            diff = layerwise_diff(scenario_network(spec, t), scenario_network(spec, t + 1)).per_layer
            assert np.all(diff[:-1] == 0) and diff[-1] > 0

    def test_change_factor_scales_updates(self):
        slow = tiny_scenario("network_updates", change_factor=1.0)
        fast = tiny_scenario("network_updates", change_factor=4.0)
        step = lambda s: layerwise_diff(scenario_network(s, 0), scenario_network(s, 1)).per_layer.sum()
        assert step(fast) > step(slow)

    def test_time_outside_horizon(self):
        spec = tiny_scenario("network_updates")
        with pytest.raises(InvalidInputError):
            scenario_network(spec, spec.horizon + 1)
        with pytest.raises(InvalidInputError):
            scenario_network(spec, -1)


class TestDimming:
    def test_box_around_dimmed_image(self):
        spec = tiny_scenario("dimming")
        image, r = base_image(spec), spec.params.radius
        box = dimming_input(spec, 0).box
        assert_allclose(box.lo, np.clip(image - r, 0, 1))
        assert_allclose(box.hi, np.clip(image + r, 0, 1))

    def test_each_step_darkens(self):
        spec = tiny_scenario("dimming")
        image, r = base_image(spec), spec.params.radius
        box = dimming_input(spec, 1).box
        assert_allclose(box.hi, np.clip(image - 1 / 256 + r, 0, 1))

    def test_clamped_at_black(self):
        spec = tiny_scenario("dimming")
        box = dimming_input(spec, 400).box
        assert_allclose(box.lo, 0.0)
        assert_allclose(box.hi, 0.0)

    def test_robustness_rows(self):
        spec = tiny_scenario("dimming", n_classes=3)
        region, net, out = gen_dimming_scenario(spec, 0)
        assert out.n_rows == 2
        assert_allclose(out.d, 0.0)
        assert out.satisfied(net.forward(base_image(spec))).all()
        assert net.in_dim == spec.params.n_pixels and region.dim == spec.params.n_pixels

    def test_correct_class_is_the_prediction(self, identity_net):
        out = robustness_spec(identity_net, np.array([0.2, 0.9]))
        assert_allclose(out.C, [[1.0, -1.0]])


class TestGenerators:
    def test_generation_is_pure(self):
        spec = tiny_scenario("network_updates")
        a, b = generate(spec, 2), generate(spec, 2)
        assert a[0].equals(b[0]) and a[1].equals(b[1]) and a[2].equals(b[2])

    def test_kind_mismatch(self):
        with pytest.raises(InvalidInputError):
            gen_dimming_scenario(tiny_scenario(), 0)
        with pytest.raises(InvalidInputError):
            gen_robotics_scenario(tiny_scenario("dimming"), 0)

    def test_generate_all(self):
        spec = tiny_scenario()
        assert len(generate_all(spec)) == spec.horizon + 1
        assert len(generate_all(spec, horizon=2)) == 3

    def test_limits_follow_branch_count(self):
        limits = scenario_limits(tiny_scenario(branches=700), VerifyLimits(max_branches=1000))
        assert limits.min_branches == 700
        assert limits.max_branches == 1400


class TestScenarioFiles:
    def test_load(self, write_scenario):
        spec = load_scenario(write_scenario({"kind": "fine_tuning", "horizon": 7}))
        assert spec.kind.value == "fine_tuning" and spec.horizon == 7

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "kind": "dimming",\n  "horizon": ,\n}', encoding="utf-8")
        with pytest.raises(ScenarioParseError) as info:
            load_scenario(path)
        assert info.value.line == 3

    def test_invalid_field(self, write_scenario):
        with pytest.raises(ScenarioParseError) as info:
            load_scenario(write_scenario({"kind": "dimming", "horizon": 0}))
        assert info.value.field == "horizon"

    def test_unknown_kind(self, write_scenario):
        with pytest.raises(ScenarioParseError) as info:
            load_scenario(write_scenario({"kind": "weather"}))
        assert info.value.field == "kind"

    def test_network_file_relative_to_scenario(self, tmp_path, write_scenario):
        net = random_network(ROBOT_DIM, ROBOT_DIM, 2, 4, seed=1)
        save_network(net, tmp_path / "net.json")
        spec = load_scenario(write_scenario({"kind": "domain_shift", "horizon": 3, "network": {"file": "net.json"}}))
        assert scenario_network(spec, 0).equals(net)

    def test_network_file_with_wrong_shape(self, tmp_path, write_scenario):
        save_network(random_network(4, 2, 2, 4), tmp_path / "net.json")
        spec = load_scenario(write_scenario({"kind": "domain_shift", "horizon": 3, "network": {"file": "net.json"}}))
        with pytest.raises(InvalidInputError):
            scenario_network(spec, 0)
