import logging
import time
from collections import deque
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from models.errors import CannotSplitError, EmptySetError, EstimationError, InvalidInputError
from models.geometry import Polytope
from models.network import LipschitzBound, Network, lipschitz_upper
from models.schemas import VerifyLimits
from models.verification import Branch, BranchStore, OutputSpec, ReachResult, Status, Tag, Verdict
from services.reachability_service import DEFAULT_COUNTEREXAMPLE_SAMPLES, check, lb_threshold, reach_region

logger = logging.getLogger(__name__)

SPLIT_TOL = 1e-9


def split(branch: Branch) -> Tuple[Branch, Branch]:
    """Bisect the widest bounding-box dimension (lowest index on ties) at its midpoint"""
    box = branch.region.box
    widths = box.width
    if np.all(widths < SPLIT_TOL):
        raise CannotSplitError(f"branch {branch.id} is too thin to split (max width {widths.max():.3e})")
    k = int(np.argmax(widths))
    middle = (box.lo[k] + box.hi[k]) / 2.0
    direction = np.zeros(box.dim)
    direction[k] = 1.0
    left = Branch(id=2 * branch.id, region=branch.region.with_split(direction, middle), depth=branch.depth + 1)
    right = Branch(id=2 * branch.id + 1, region=branch.region.with_split(-direction, -middle), depth=branch.depth + 1)
    return left, right


def evaluate_region(region: Polytope, net: Network, spec: OutputSpec,
                    n_samples: int = DEFAULT_COUNTEREXAMPLE_SAMPLES, seed: int = 0) -> Tuple[ReachResult, Verdict]:
    """Reach and check one region"""
    reach = reach_region(net, region)
    return reach, check(reach, spec, net, region, n_samples, seed)


def certify(branch: Branch, reach: ReachResult, verdict: Verdict, net: Network, spec: OutputSpec,
            lipschitz: LipschitzBound, time_index: int) -> Branch:
    """Attach a fresh full-reach result and the certificate epoch to a branch"""
    return branch.copy(
        cached_reach=reach,
        verdict=verdict,
        lb_delta=lb_threshold(reach, spec, lipschitz) if verdict.holds else None,
        rsr_cert=None,
        tag=Tag.RECOMPUTE,
        epoch=time_index,
        epoch_region=branch.region,
        reach_network=net,
    )


def presplit(root: Branch, limits: VerifyLimits) -> deque:
    """Breadth-first splitting until the worklist holds ``min_branches`` regions"""
    queue = deque([root])
    while len(queue) < min(limits.min_branches, limits.max_branches):
        branch = queue.popleft()
        if branch.depth >= limits.max_depth:
            queue.appendleft(branch)
            break
        try:
            queue.extend(split(branch))
        except CannotSplitError:
            queue.appendleft(branch)
            break
    return queue


def reach_and_branch(input_region: Polytope, net: Network, spec: OutputSpec, limits: VerifyLimits = None,
                     counterexample_samples: int = DEFAULT_COUNTEREXAMPLE_SAMPLES, seed: int = 0,
                     n_jobs: int = 1, time_index: int = 0) -> Tuple[Status, BranchStore]:
    """FIFO reach, check and split until every region holds, a violation appears or a limit is hit.

    Args:
        input_region: input set to verify
        net: network under verification
        spec: output specification
        limits: branch, depth and time limits
        counterexample_samples: random samples per failed check
        seed: base seed of the counterexample search (offset by branch id)
        n_jobs: evaluate each worklist level with this many joblib workers
        time_index: certificate epoch recorded on every branch

    Returns:
        (status, store); on limits the store also holds the unresolved regions
    """
    limits = limits or VerifyLimits()
    try:
        input_region.box
    except EmptySetError:
        raise InvalidInputError("input region is infeasible")
    if spec.out_dim != net.out_dim:
        raise InvalidInputError(f"spec expects {spec.out_dim} outputs, network produces {net.out_dim}")

    lipschitz = lipschitz_upper(net)
    started = time.perf_counter()
    queue = presplit(Branch(id=1, region=input_region), limits)
    n_regions = len(queue)
    final: List[Branch] = []
    status = Status.HOLD
    witness = None
    reach_calls = 0
    limit_hit = False

    while queue:
        if limits.time_budget is not None and time.perf_counter() - started > limits.time_budget:
            logger.info(f"Time budget of {limits.time_budget}s exhausted with {len(queue)} regions queued")
            limit_hit = True
            break
        batch = list(queue) if n_jobs != 1 else [queue[0]]
        if n_jobs != 1:
            results = Parallel(n_jobs=n_jobs)(
                delayed(evaluate_region)(b.region, net, spec, counterexample_samples, seed + b.id) for b in batch
            )
        else:
            results = [evaluate_region(batch[0].region, net, spec, counterexample_samples, seed + batch[0].id)]
        for _ in batch:
            queue.popleft()
        reach_calls += len(batch)

        for i, (branch, (reach, verdict)) in enumerate(zip(batch, results)):
            branch = certify(branch, reach, verdict, net, spec, lipschitz, time_index)
            if verdict.status is Status.VIOLATED:
                status = Status.VIOLATED
                witness = verdict.witness
                final.append(branch)
                # regions not yet popped stay unresolved
                final.extend(batch[i + 1:])
                final.extend(queue)
                queue.clear()
                break
            if verdict.holds:
                final.append(branch)
                continue
            if branch.depth >= limits.max_depth or n_regions + 1 > limits.max_branches:
                limit_hit = True
                final.append(branch)
                continue
            try:
                queue.extend(split(branch))
                n_regions += 1
            except CannotSplitError as e:
                logger.debug(str(e))
                final.append(branch)
        if status is Status.VIOLATED:
            break

    final.extend(queue)
    if status is not Status.VIOLATED:
        status = Status.combine([b.verdict.status for b in final])
    if limit_hit:
        logger.info(f"Computation limit reached: {len(final)} regions, status {status.value}")
    logger.debug(f"Reach+branch finished with {len(final)} regions and {reach_calls} reach calls")
    store = BranchStore(
        branches=final,
        origin_time=time_index,
        input_region=input_region,
        network=net,
        spec=spec,
        status=status,
        witness=witness,
        lipschitz=lipschitz,
        reach_calls=reach_calls,
    )
    return status, store


def coverage_rate(store: BranchStore, input_region: Polytope, n_samples: int = 2000, seed: int = 0) -> float:
    """Fraction of uniform samples of ``input_region`` that fall inside a hold branch.

    Samples come from rejection against the region's proposal frame, the
    bounding box or a tighter parallelotope for thin sets such as the
    robotics velocity windows.
    """
    if n_samples < 1:
        raise InvalidInputError("coverage needs at least one sample")
    rng = np.random.default_rng(seed)
    points = input_region.proposal.sample(rng, n_samples)
    points = points[input_region.contains_points(points)]
    if len(points) == 0:
        raise EstimationError("no sample landed inside the input region")
    covered = np.zeros(len(points), dtype=bool)
    for branch in store.hold_branches:
        covered |= branch.region.contains_points(points)
    return float(covered.mean())


def build_store(input_region: Polytope, net: Network, spec: OutputSpec, limits: VerifyLimits = None,
                counterexample_samples: int = DEFAULT_COUNTEREXAMPLE_SAMPLES, seed: int = 0, n_jobs: int = 1,
                time_index: int = 0, coverage_samples: Optional[int] = None) -> BranchStore:
    """Reach+branch plus the origin coverage the rebranch trigger compares against"""
    _, store = reach_and_branch(input_region, net, spec, limits, counterexample_samples, seed, n_jobs, time_index)
    if coverage_samples:
        store.origin_coverage = coverage_rate(store, input_region, coverage_samples, seed)
        store.last_coverage = store.origin_coverage
    return store
