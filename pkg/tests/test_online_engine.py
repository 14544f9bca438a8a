import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from conftest import abs_network
from models.errors import InvalidStateError
from models.geometry import Polytope, subset_check
from models.network import Activation, Layer, Network, random_network
from models.schemas import EngineConfig, VerifyLimits
from models.verification import BranchPath, OutputSpec, Status, Tag
from services.branching_service import build_store, evaluate_region
from services.online_service import OnlineVerifier, bmi_update, bmw_update, online_step
from services.reachability_service import reach_inn, reach_region

ABS_INPUT = Polytope.from_bounds([(-3, 2)])


def config(flags: str, **changes) -> EngineConfig:
    return EngineConfig(accel_flags=flags, coverage_samples=200, **changes)


def paths(report):
    return [outcome.path for outcome in report.per_branch]


class TestColdStartAndBaseline:
    def test_cold_start_recomputes(self, abs_net):
        report, store = online_step(0, ABS_INPUT, abs_net, OutputSpec.from_bounds(hi=[6.0]), None, config("bmi"))
        assert paths(report) == [BranchPath.RECOMPUTED]
        assert report.step_status is Status.HOLD
        assert report.coverage == 1.0
        assert store.origin_coverage == 1.0

    def test_baseline_rebuilds_every_step(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[4.5])
        with OnlineVerifier(config("none")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, ABS_INPUT, abs_net, spec)
        assert set(paths(report)) == {BranchPath.RECOMPUTED}
        assert report.full_reach_calls == 3


class TestBranchManagementInput:
    def test_unchanged_input_reuses_everything(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[4.5])
        with OnlineVerifier(config("bmi")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2)]), abs_net, spec)
        assert set(paths(report)) == {BranchPath.REUSED}
        assert report.full_reach_calls == 0
        assert report.step_status is Status.HOLD

    def test_shrinking_input_reuses_contained_branches(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[4.5])
        with OnlineVerifier(config("bmi")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-2.9, 1.9)]), abs_net, spec)
        assert set(paths(report)) == {BranchPath.REUSED}
        assert report.step_status is Status.HOLD

    def test_growing_input_recomputes(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        with OnlineVerifier(config("bmi")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2.1)]), abs_net, spec)
        assert paths(report) == [BranchPath.RECOMPUTED]
        assert report.full_reach_calls == 1

    def test_growing_input_recomputes_only_the_touching_branch(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[10.0])
        cfg = config("bmi", limits=VerifyLimits(min_branches=2))
        _, store = online_step(0, Polytope.from_bounds([(-5, 3)]), abs_net, spec, None, cfg)
        assert {b.id: (b.region.box.lo[0], b.region.box.hi[0]) for b in store.branches} == {2: (-5, -1), 3: (-1, 3)}
        report, store = online_step(1, Polytope.from_bounds([(-6, 3)]), abs_net, spec, store, cfg)
        assert {o.branch_id: o.path for o in report.per_branch} == {
            2: BranchPath.RECOMPUTED,
            3: BranchPath.REUSED,
        }
        assert report.full_reach_calls == 1
        assert report.step_status is Status.HOLD

    def test_reused_verdicts_match_recomputation(self, small_net):
        region = Polytope.from_bounds([(-1, 1)] * 3)
        spec = OutputSpec.from_bounds(hi=reach_region(small_net, region).output.hi)
        cfg = config("bmi", limits=VerifyLimits(min_branches=8))
        store = build_store(region, small_net, spec, cfg.limits)
        moved = bmi_update(Polytope.from_bounds([(-0.9, 1.0), (-1, 0.8), (-1, 1)]), store, cfg, small_net, spec, 1)
        for branch in moved.branches:
            if branch.tag is Tag.REUSE and branch.verdict.holds:
                _, fresh = evaluate_region(branch.region, small_net, spec)
                assert fresh.status is branch.verdict.status

    def test_empty_branches_are_dropped(self, abs_net):
        cfg = config("bmi", limits=VerifyLimits(min_branches=2))
        store = build_store(ABS_INPUT, abs_net, OutputSpec.from_bounds(hi=[6.0]), cfg.limits)
        moved = bmi_update(Polytope.from_bounds([(0, 2)]), store, cfg, abs_net, store.spec, 1)
        assert [b.id for b in moved.branches] == [3]

    def test_base_row_mismatch(self, abs_net):
        cfg = config("bmi")
        store = build_store(ABS_INPUT, abs_net, OutputSpec.from_bounds(hi=[6.0]))
        extra = Polytope.from_rows([([1.0], 2.0), ([-1.0], 3.0), ([1.0], 1.5)])
        with pytest.raises(InvalidStateError):
            bmi_update(extra, store, cfg, abs_net, store.spec, 1)

    def test_coverage_drop_triggers_rebranch(self, abs_net):
        cfg = config("bmi")
        store = build_store(ABS_INPUT, abs_net, OutputSpec.from_bounds(hi=[6.0]), coverage_samples=100)
        store.last_coverage = 0.5
        rebuilt = bmi_update(ABS_INPUT, store, cfg, abs_net, store.spec, 3)
        assert rebuilt.generation == store.generation + 1
        assert rebuilt.origin_time == 3


class TestTolerance:
    def test_lipschitz_tolerates_small_drift(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        with OnlineVerifier(config("bmi,lb")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2.1)]), abs_net, spec)
        assert paths(report) == [BranchPath.TOLERATED_LB]
        assert report.full_reach_calls == 0

    def test_lipschitz_refuses_large_drift(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        with OnlineVerifier(config("bmi,lb")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2.6)]), abs_net, spec)
        assert paths(report) == [BranchPath.RECOMPUTED]

    def test_relaxed_certificate_tolerates_drift(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        with OnlineVerifier(config("bmi,rsr", rsr_offset=0.2)) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            cert = verifier.store.branches[0].rsr_cert
            assert cert is None
            verifier.refresher.apply(verifier.store)
            cert = verifier.store.branches[0].rsr_cert
            assert cert is not None and subset_check(ABS_INPUT, cert.relaxed_region)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2.1)]), abs_net, spec)
        assert paths(report) == [BranchPath.TOLERATED_RSR]
        assert report.full_reach_calls == 0

    def test_relaxed_certificate_refused_when_region_escapes(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        with OnlineVerifier(config("bmi,rsr", rsr_offset=0.05)) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2.1)]), abs_net, spec)
        assert paths(report) == [BranchPath.RECOMPUTED]

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), drift=st.floats(0.0, 0.3))
    def test_tolerated_branches_still_hold(self, seed, drift):
        rng = np.random.default_rng(seed)
        net = random_network(2, 1, 2, 5, seed=seed)
        region = Polytope.from_bounds([(-1, 1)] * 2)
        spec = OutputSpec.from_bounds(hi=reach_region(net, region).output.hi + 0.3)
        moved = Polytope.from_bounds([(-1, 1 + drift), (-1 - drift, 1)])
        with OnlineVerifier(config("bmi,lb,rsr", rsr_offset=0.1, limits=VerifyLimits(min_branches=4))) as verifier:
            verifier.step(0, region, net, spec)
            report = verifier.step(1, moved, net, spec)
            tolerated = {o.branch_id for o in report.per_branch
                         if o.path in (BranchPath.TOLERATED_LB, BranchPath.TOLERATED_RSR)}
            for branch in verifier.store.branches:
                if branch.id in tolerated:
                    points = branch.region.sample(rng, 1000)
                    assert spec.satisfied(net.forward(points)).all()


class TestWeightChanges:
    def test_weight_update_recomputes_every_branch(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[20.0])
        with OnlineVerifier(config("bmw")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, ABS_INPUT, abs_network(1.05), spec)
        assert paths(report) == [BranchPath.RECOMPUTED]
        assert verifier.store.generation == 0

    def test_interval_network_tolerates_later_updates(self):
        spec = OutputSpec.from_bounds(hi=[20.0])
        with OnlineVerifier(config("bmw,inn")) as verifier:
            verifier.step(0, ABS_INPUT, abs_network(2.0), spec)
            first = verifier.step(1, ABS_INPUT, abs_network(2.05), spec)
            second = verifier.step(2, ABS_INPUT, abs_network(2.1), spec)
        assert paths(first) == [BranchPath.RECOMPUTED]
        assert paths(second) == [BranchPath.TOLERATED_INN]
        assert second.full_reach_calls == 0
        assert_allclose(verifier.store.max_layer_diff.to_list(), [0.0, 0.1])

    def test_interval_reach_dominates_member_reach(self):
        spec = OutputSpec.from_bounds(hi=[20.0])
        with OnlineVerifier(config("bmw,inn")) as verifier:
            verifier.step(0, ABS_INPUT, abs_network(2.0), spec)
            verifier.step(1, ABS_INPUT, abs_network(2.05), spec)
            inn = verifier.store.inn
        outer = reach_inn(inn, ABS_INPUT.box).output
        assert outer.contains(reach_region(abs_network(2.1), ABS_INPUT).output)

    def test_zero_radius_interval_network_never_tolerates(self):
        spec = OutputSpec.from_bounds(hi=[20.0])
        with OnlineVerifier(config("bmw,inn", inn_radius_scale=0.0)) as verifier:
            for t, scale in enumerate([2.0, 2.05, 2.1, 2.15]):
                report = verifier.step(t, ABS_INPUT, abs_network(scale), spec)
        assert paths(report) == [BranchPath.RECOMPUTED]

    def test_incremental_fine_tuning(self, small_net):
        region = Polytope.from_bounds([(-1, 1)] * 3)
        spec = OutputSpec.from_bounds(hi=reach_region(small_net, region).output.hi + 1.0)
        last = small_net.layers[-1]
        tuned = small_net.with_last_layer(Layer(last.weights * 1.01, last.bias + 0.01, last.activation))
        with OnlineVerifier(config("bmw,ic", limits=VerifyLimits(min_branches=4))) as verifier:
            verifier.step(0, region, small_net, spec)
            report = verifier.step(1, region, tuned, spec)
            branches = verifier.store.branches
        assert set(paths(report)) == {BranchPath.INCREMENTAL}
        assert report.incremental_calls == len(branches) and report.full_reach_calls == 0
        for branch in branches:
            full = reach_region(tuned, branch.region).output
            assert_allclose(branch.cached_reach.output.lo, full.lo, atol=1e-12)
            assert_allclose(branch.cached_reach.output.hi, full.hi, atol=1e-12)

    def test_violation_is_reported_with_witness(self):
        spec = OutputSpec.from_bounds(hi=[5.5])
        with OnlineVerifier(config("bmw")) as verifier:
            verifier.step(0, ABS_INPUT, abs_network(1.0), spec)
            report = verifier.step(1, ABS_INPUT, abs_network(3.0), spec)
        assert report.step_status is Status.VIOLATED
        assert abs_network(3.0).forward(report.witness)[0] > 5.5
        assert report.witness_record()["status"] == "violated"

    def test_architecture_change_rebuilds(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        wider = Network((Layer([[1.0], [-1.0], [0.0]], [0.0, 0.0, 0.0]),
                         Layer([[1.0, 1.0, 0.0]], [0.0], Activation.LINEAR)))
        with OnlineVerifier(config("bmw")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, ABS_INPUT, wider, spec)
        assert paths(report) == [BranchPath.REBRANCHED]
        assert report.step_status is Status.HOLD
        assert verifier.store.generation == 1

    def test_weight_update_keeps_regions(self, abs_net):
        cfg = config("bmw", limits=VerifyLimits(min_branches=2))
        store = build_store(ABS_INPUT, abs_net, OutputSpec.from_bounds(hi=[6.0]), cfg.limits)
        moved = bmw_update(store, cfg, ABS_INPUT, abs_network(1.1), store.spec, 1)
        assert [b.id for b in moved.branches] == [b.id for b in store.branches]
        assert all(b.tag is Tag.RECOMPUTE for b in moved.branches)
        assert all(a.region is b.region for a, b in zip(moved.branches, store.branches))


class TestStepReport:
    def test_csv_row(self, abs_net):
        spec = OutputSpec.from_bounds(hi=[6.0])
        with OnlineVerifier(config("bmi,lb")) as verifier:
            verifier.step(0, ABS_INPUT, abs_net, spec)
            report = verifier.step(1, Polytope.from_bounds([(-3, 2.1)]), abs_net, spec)
        row = report.to_row()
        assert row["t"] == 1 and row["status"] == "hold"
        assert row["n_lb"] == 1 and row["n_recomputed"] == 0
        assert row["wall_ms"] >= 0
