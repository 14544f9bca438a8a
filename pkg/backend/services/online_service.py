import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.errors import EstimationError, InvalidStateError
from models.geometry import Polytope, subset_check
from models.network import LipschitzBound, Network, build_inn, layerwise_diff, lipschitz_upper
from models.schemas import Accelerator, EngineConfig
from models.verification import (
    Branch, BranchOutcome, BranchPath, BranchStore, OutputSpec, Status, StepReport, Tag, Verdict,
)
from services.branching_service import certify, coverage_rate, evaluate_region, reach_and_branch
from services.reachability_service import check, reach_incremental
from services.refresh_service import CertificateRefresher
from services.tolerance_service import inn_tolerable, lb_tolerable, rsr_tolerable

logger = logging.getLogger(__name__)


@dataclass
class _StepContext:
    """Per-step state shared by the branch paths"""

    t: int
    net: Network
    spec: OutputSpec
    cfg: EngineConfig
    store: BranchStore
    lipschitz: LipschitzBound
    inn_ok: bool = False
    full_reach_calls: int = 0
    incremental_calls: int = 0
    _same: Dict[int, bool] = field(default_factory=dict)

    def same_network(self, other: Optional[Network]) -> bool:
        if other is None:
            return False
        key = id(other)
        if key not in self._same:
            self._same[key] = other.equals(self.net)
        return self._same[key]


def _needs_rebranch(store: BranchStore, cfg: EngineConfig) -> bool:
    if store.last_coverage is None or store.origin_coverage is None:
        return False
    return store.last_coverage < cfg.rebranch_coverage_threshold * store.origin_coverage


def _rebuild(t: int, input_region: Polytope, net: Network, spec: OutputSpec, cfg: EngineConfig,
             previous: Optional[BranchStore]) -> BranchStore:
    """Fresh reach+branch; interval-network history survives when the architecture is unchanged"""
    _, store = reach_and_branch(input_region, net, spec, cfg.limits, cfg.counterexample_samples,
                                cfg.seed, cfg.n_jobs, time_index=t)
    for branch in store.branches:
        branch.tag = Tag.RECOMPUTE
    if previous is not None:
        store.generation = previous.generation + 1
        if previous.network.architecture == net.architecture:
            store.max_layer_diff = previous.max_layer_diff
            store.inn = previous.inn
            store.inn_generation = previous.inn_generation
    return store


def bmi_update(input_t: Polytope, store: BranchStore, cfg: EngineConfig, net: Network, spec: OutputSpec,
               t: int = None) -> BranchStore:
    """Carry the branch partition over to a moved input set.

    Each branch keeps its split rows and takes the new base rows. A branch
    whose new region lies inside its previous one is tagged reuse; empty
    regions are dropped. Falls back to a full rebuild when coverage has
    degraded below the rebranch threshold.
    """
    if input_t.n_base != store.input_region.n_base or input_t.dim != store.input_region.dim:
        raise InvalidStateError(
            f"input has {input_t.n_base} base rows, stored branches were built on {store.input_region.n_base}"
        )
    t = store.origin_time if t is None else t
    if _needs_rebranch(store, cfg):
        logger.info(f"Coverage {store.last_coverage:.3f} fell below the rebranch threshold at t={t}; rebuilding")
        return _rebuild(t, input_t, net, spec, cfg, store)

    unchanged = input_t.same_base(store.input_region)
    branches: List[Branch] = []
    for branch in store.branches:
        old = branch.region
        region = old if unchanged else old.with_base_of(input_t)
        containment = subset_check(region, old)
        if containment.empty:
            logger.debug(f"Branch {branch.id} left the input set; dropping it")
            continue
        reusable = containment.contained and (branch.verdict.holds or region.equals(old))
        branches.append(branch.copy(region=region, tag=Tag.REUSE if reusable else Tag.RECOMPUTE))
    return store.copy(branches=branches, input_region=input_t)


def bmw_update(store: BranchStore, cfg: EngineConfig, input_region: Polytope, net: Network, spec: OutputSpec,
               t: int = None) -> BranchStore:
    """Keep every region verbatim after a weight change and tag all branches for recomputation"""
    t = store.origin_time if t is None else t
    if _needs_rebranch(store, cfg):
        logger.info(f"Coverage {store.last_coverage:.3f} fell below the rebranch threshold at t={t}; rebuilding")
        return _rebuild(t, input_region, net, spec, cfg, store)
    return store.copy(branches=[b.copy(tag=Tag.RECOMPUTE) for b in store.branches])


def _process_branch(branch: Branch, ctx: _StepContext) -> Tuple[Branch, BranchPath]:
    """First applicable path: reuse, LB, RSR, INN, incremental, full reach"""
    cfg, net, spec, region = ctx.cfg, ctx.net, ctx.spec, branch.region
    same_net = ctx.same_network(branch.reach_network)

    if branch.tag is Tag.REUSE and same_net:
        return branch, BranchPath.REUSED

    if (cfg.has(Accelerator.LB) and same_net and branch.verdict.holds and branch.lb_delta is not None
            and lb_tolerable(branch, region, ctx.lipschitz)):
        return branch, BranchPath.TOLERATED_LB

    cert = branch.rsr_cert
    if (cfg.has(Accelerator.RSR) and cert is not None and ctx.same_network(cert.network)
            and rsr_tolerable(region, cert)):
        verdict = branch.verdict if branch.verdict.holds else cert.verdict
        return branch.copy(verdict=verdict), BranchPath.TOLERATED_RSR

    if (cfg.has(Accelerator.INN) and ctx.inn_ok and branch.inn_reach is not None
            and branch.inn_generation == ctx.store.inn_generation
            and branch.inn_region is not None and region.equals(branch.inn_region)):
        margins = spec.margins(branch.inn_reach.output)
        if np.all(margins >= 0):
            verdict = branch.verdict if branch.verdict.holds else Verdict(Status.HOLD, margins)
            return branch.copy(verdict=verdict), BranchPath.TOLERATED_INN

    seed = cfg.seed + branch.id
    if (cfg.has(Accelerator.IC) and branch.cached_reach is not None and branch.reach_network is not None
            and branch.epoch_region is not None and region.equals(branch.epoch_region)
            and branch.reach_network.prefix_equals(net, net.depth - 1)):
        reach = reach_incremental(branch.cached_reach, net.layers[-1])
        verdict = check(reach, spec, net, region, cfg.counterexample_samples, seed)
        ctx.incremental_calls += 1
        return certify(branch, reach, verdict, net, spec, ctx.lipschitz, ctx.t), BranchPath.INCREMENTAL

    reach, verdict = evaluate_region(region, net, spec, cfg.counterexample_samples, seed)
    ctx.full_reach_calls += 1
    return certify(branch, reach, verdict, net, spec, ctx.lipschitz, ctx.t), BranchPath.RECOMPUTED


def _reset(branch: Branch) -> Branch:
    return branch.copy(verdict=Verdict.unknown(), tag=Tag.RECOMPUTE, cached_reach=None,
                       lb_delta=None, rsr_cert=None)


def _update_inn(store: BranchStore, previous_net: Network, net: Network, cfg: EngineConfig) -> bool:
    """Track the largest one-step weight change and rebuild the interval network when it is left"""
    if not previous_net.equals(net):
        step = layerwise_diff(previous_net, net)
        store.max_layer_diff = step if store.max_layer_diff is None else store.max_layer_diff.maximum(step)
    if not cfg.has(Accelerator.INN) or store.max_layer_diff is None:
        return False
    if store.inn is not None and inn_tolerable(store.inn, net):
        return True
    store.inn = build_inn(net, store.max_layer_diff.scaled(cfg.inn_radius_scale))
    store.inn_generation += 1
    logger.info(f"Rebuilt interval network (generation {store.inn_generation}) with radius "
                f"{store.max_layer_diff.scaled(cfg.inn_radius_scale).to_list()}")
    return True


def _compatible(store: BranchStore, input_region: Polytope, net: Network, spec: OutputSpec) -> bool:
    return (spec.equals(store.spec)
            and input_region.dim == store.input_region.dim
            and input_region.n_base == store.input_region.n_base
            and net.architecture == store.network.architecture)


def online_step(t: int, input_region: Polytope, net: Network, spec: OutputSpec, store: Optional[BranchStore],
                cfg: EngineConfig, refresher: CertificateRefresher = None) -> Tuple[StepReport, BranchStore]:
    """Verify one time step, reusing what the stored branches allow.

    Args:
        t: time index
        input_region: input set at ``t``
        net: network at ``t``
        spec: output specification
        store: branch store from the previous step, or None for a cold start
        cfg: accelerator selection and parameters
        refresher: background certificate builder; results are swapped in before the step

    Returns:
        (report, store) where the store is the state to pass to the next step
    """
    if refresher is not None and store is not None:
        refresher.apply(store)
    started = time.perf_counter()

    rebuilt = False
    outcomes: List[BranchOutcome] = []
    ctx = None
    if store is None or cfg.is_baseline or not _compatible(store, input_region, net, spec):
        path = BranchPath.RECOMPUTED if store is None or cfg.is_baseline else BranchPath.REBRANCHED
        if path is BranchPath.REBRANCHED:
            logger.info(f"Problem structure changed at t={t}; rebuilding branches")
        managed = _rebuild(t, input_region, net, spec, cfg, store)
        rebuilt = True
    else:
        managed = store
        input_changed = not input_region.same_base(store.input_region)
        net_changed = not net.equals(store.network)
        if input_changed:
            managed = (bmi_update(input_region, managed, cfg, net, spec, t)
                       if cfg.has(Accelerator.BMI) else None)
        if managed is not None and managed.generation == store.generation and net_changed:
            managed = (bmw_update(managed, cfg, input_region, net, spec, t)
                       if cfg.has(Accelerator.BMW) else None)
        if managed is None:
            managed = _rebuild(t, input_region, net, spec, cfg, store)
        elif not input_changed and not net_changed:
            managed = managed.copy(branches=[b.copy(tag=Tag.REUSE) for b in managed.branches])
        rebuilt = managed.generation != store.generation
        path = BranchPath.REBRANCHED
        inn_ok = _update_inn(managed, store.network, net, cfg)
        if not rebuilt:
            if net_changed:
                managed.lipschitz = lipschitz_upper(net)
            managed.network = net
            managed.input_region = input_region
            ctx = _StepContext(t, net, spec, cfg, managed, managed.lipschitz, inn_ok)

    witness = None
    if rebuilt:
        outcomes = [BranchOutcome(b.id, path, b.verdict.status) for b in managed.branches]
        full_calls, incremental_calls = managed.reach_calls, 0
        witness = managed.witness
        step_status = managed.status
    else:
        for i, branch in enumerate(managed.branches):
            processed, branch_path = _process_branch(branch, ctx)
            managed.branches[i] = processed
            outcomes.append(BranchOutcome(processed.id, branch_path, processed.verdict.status))
            if processed.verdict.status is Status.VIOLATED:
                witness = processed.verdict.witness
                managed.branches[i + 1:] = [_reset(b) for b in managed.branches[i + 1:]]
                logger.info(f"Violation found in branch {processed.id} at t={t}")
                break
        full_calls, incremental_calls = ctx.full_reach_calls, ctx.incremental_calls
        step_status = Status.VIOLATED if witness is not None else Status.combine(
            [b.verdict.status for b in managed.branches])
        managed.status = step_status
        managed.witness = witness

    wall_time = time.perf_counter() - started

    try:
        coverage = coverage_rate(managed, input_region, cfg.coverage_samples, cfg.seed)
    except EstimationError as e:
        logger.warning(f"Coverage not measured at t={t}: {e}")
        coverage = None
    managed.last_coverage = coverage
    if rebuilt:
        managed.origin_coverage = coverage
    if refresher is not None and not cfg.is_baseline:
        refresher.request(managed, net, spec, t)

    report = StepReport(
        time_index=t,
        per_branch=outcomes,
        step_status=step_status,
        wall_time=wall_time,
        coverage=coverage,
        witness=witness,
        full_reach_calls=full_calls,
        incremental_calls=incremental_calls,
    )
    logger.debug(f"t={t} status={step_status.value} reach={full_calls} ic={incremental_calls} "
                 f"wall={wall_time * 1000:.2f}ms")
    return report, managed


class OnlineVerifier:
    """Stateful wrapper around ``online_step``: owns the branch store and the background builder"""

    def __init__(self, cfg: EngineConfig, refresher: CertificateRefresher = None):
        self.cfg = cfg
        self.refresher = refresher or CertificateRefresher(cfg)
        self.store: Optional[BranchStore] = None
        self.reports: List[StepReport] = []

    def step(self, t: int, input_region: Polytope, net: Network, spec: OutputSpec) -> StepReport:
        report, self.store = online_step(t, input_region, net, spec, self.store, self.cfg, self.refresher)
        self.reports.append(report)
        return report

    def close(self):
        self.refresher.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
