import logging
import math
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from models.errors import InfeasibleDeadlineError
from models.geometry import Polytope
from models.network import IntervalNetwork, Network
from models.schemas import Accelerator, EngineConfig, PlannerInput
from models.verification import Branch, BranchStore, OutputSpec, ReachResult, RelaxedCertificate, Status, Verdict
from services.reachability_service import reach_inn
from services.tolerance_service import rsr_build

logger = logging.getLogger(__name__)

ROUNDOFF = 1e-9


def worker_count(p: PlannerInput) -> int:
    """Workers needed so a fresh certificate is always ready: ``ceil((min headroom - T) / dt)``.

    Sizes the pool for relaxed certificates and interval-network reaches alike.
    """
    headroom = min(p.headroom)
    if headroom <= p.build_time:
        raise InfeasibleDeadlineError(
            f"headroom {headroom} does not exceed build time {p.build_time}; certificates expire before they are ready"
        )
    k = max(1, math.ceil((headroom - p.build_time) / p.change_gap - ROUNDOFF))
    if headroom < 2 * p.build_time:
        logger.warning(
            f"Headroom {headroom} is below twice the build time {p.build_time}; "
            f"{k} workers may leave certificate gaps"
        )
    return k


def simulate_certificate_schedule(p: PlannerInput, k: int, n_steps: int) -> List[int]:
    """Discrete-event run of ``k`` background workers; returns the steps left without a valid certificate.

    Steps happen every ``change_gap``. At each step one idle worker, if any,
    starts a construction from the current state; it finishes ``build_time``
    later and its certificate is usable from then until ``headroom`` after its
    snapshot. Steps before the first construction can finish are warm-up.
    """
    headroom = min(p.headroom)
    eps = ROUNDOFF * max(1.0, headroom)
    free_at = [0.0] * k
    snapshots: List[float] = []
    gaps = []
    for n in range(n_steps):
        now = n * p.change_gap
        idle = [w for w in range(k) if free_at[w] <= now + eps]
        if idle:
            free_at[idle[0]] = now + p.build_time
            snapshots.append(now)
        if now + eps < p.build_time:
            continue
        covered = any(s + p.build_time <= now + eps and now <= s + headroom + eps for s in snapshots)
        if not covered:
            gaps.append(n)
    return gaps


@dataclass
class RefreshSnapshot:
    """Immutable inputs of one background construction round"""

    generation: int
    inn_generation: int
    time_index: int
    network: Network
    spec: OutputSpec
    offset: float
    rsr_regions: Dict[int, Polytope] = field(default_factory=dict)
    inn: Optional[IntervalNetwork] = None
    inn_regions: Dict[int, Polytope] = field(default_factory=dict)


@dataclass
class RefreshResult:
    generation: int
    inn_generation: int
    certificates: Dict[int, Tuple[Polytope, Optional[RelaxedCertificate]]] = field(default_factory=dict)
    inn_reaches: Dict[int, Tuple[Polytope, ReachResult]] = field(default_factory=dict)


def build_certificates(snapshot: RefreshSnapshot) -> RefreshResult:
    """Relaxed certificates and interval-network reaches for every snapshot region"""
    result = RefreshResult(snapshot.generation, snapshot.inn_generation)
    for branch_id, region in snapshot.rsr_regions.items():
        # rsr_build only needs the region and a hold verdict from the snapshot
        candidate = Branch(id=branch_id, region=region, verdict=Verdict(Status.HOLD, []))
        result.certificates[branch_id] = (region, rsr_build(candidate, snapshot.network, snapshot.spec,
                                                                snapshot.offset, snapshot.time_index))
    for branch_id, region in snapshot.inn_regions.items():
        result.inn_reaches[branch_id] = (region, reach_inn(snapshot.inn, region.box))
    return result


class CertificateRefresher:
    """Background construction of relaxed certificates and interval-network reaches.

    Results are swapped into the store only between steps (``apply``); a
    result built for an older store generation is discarded.
    """

    def __init__(self, cfg: EngineConfig, max_workers: int = None):
        self.cfg = cfg
        self.synchronous = cfg.synchronous
        self.max_workers = max_workers or cfg.max_workers
        self._executor: Optional[ThreadPoolExecutor] = None
        self._lock = threading.Lock()
        self._completed: List[RefreshResult] = []
        self._in_flight: Set[Tuple[int, str, int]] = set()
        self._futures: List[Future] = []

    @classmethod
    def from_planner(cls, cfg: EngineConfig, planner: PlannerInput, cap: int = None) -> "CertificateRefresher":
        workers = worker_count(planner)
        if cap is not None and workers > cap:
            logger.warning(f"Planner asks for {workers} workers; capped at {cap}")
            workers = cap
        return cls(cfg, max_workers=workers)

    @property
    def enabled(self) -> bool:
        return self.cfg.has(Accelerator.RSR) or self.cfg.has(Accelerator.INN)

    def _snapshot(self, store: BranchStore, net: Network, spec: OutputSpec, t: int) -> Optional[RefreshSnapshot]:
        snapshot = RefreshSnapshot(store.generation, store.inn_generation, t, net, spec, self.cfg.rsr_offset)
        with self._lock:
            for branch in store.branches:
                if (self.cfg.has(Accelerator.RSR) and branch.verdict.holds and branch.rsr_cert is None
                        and (store.generation, "rsr", branch.id) not in self._in_flight):
                    snapshot.rsr_regions[branch.id] = branch.region
                if (self.cfg.has(Accelerator.INN) and store.inn is not None
                        and branch.inn_generation != store.inn_generation
                        and (store.inn_generation, "inn", branch.id) not in self._in_flight):
                    snapshot.inn_regions[branch.id] = branch.region
            if not snapshot.rsr_regions and not snapshot.inn_regions:
                return None
            snapshot.inn = store.inn
            self._in_flight.update((store.generation, "rsr", i) for i in snapshot.rsr_regions)
            self._in_flight.update((store.inn_generation, "inn", i) for i in snapshot.inn_regions)
        return snapshot

    def _finish(self, snapshot: RefreshSnapshot, result: RefreshResult):
        with self._lock:
            self._completed.append(result)
            self._in_flight.difference_update((snapshot.generation, "rsr", i) for i in snapshot.rsr_regions)
            self._in_flight.difference_update((snapshot.inn_generation, "inn", i) for i in snapshot.inn_regions)

    def _run(self, snapshot: RefreshSnapshot):
        try:
            result = build_certificates(snapshot)
        except Exception as e:
            logger.error(f"Background certificate construction failed: {e}")
            result = RefreshResult(snapshot.generation, snapshot.inn_generation)
        self._finish(snapshot, result)

    def request(self, store: BranchStore, net: Network, spec: OutputSpec, t: int) -> Optional[Future]:
        """Schedule construction for every branch that lacks a current certificate"""
        if not self.enabled:
            return None
        snapshot = self._snapshot(store, net, spec, t)
        if snapshot is None:
            return None
        if self.synchronous:
            self._finish(snapshot, build_certificates(snapshot))
            return None
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="certificates")
        self._futures = [f for f in self._futures if not f.done()]
        future = self._executor.submit(self._run, snapshot)
        self._futures.append(future)
        logger.debug(f"Scheduled {len(snapshot.rsr_regions)} relaxed certificates and "
                     f"{len(snapshot.inn_regions)} interval reaches at t={t}")
        return future

    def apply(self, store: BranchStore) -> int:
        """Swap completed results into the store; returns the number of branches updated"""
        with self._lock:
            completed, self._completed = self._completed, []
        by_id: Dict[int, Branch] = {b.id: b for b in store.branches}
        updated = 0
        for result in completed:
            if result.generation != store.generation:
                logger.debug(f"Discarding certificates for store generation {result.generation} "
                               f"(current {store.generation})")
                continue
            for branch_id, (region, cert) in result.certificates.items():
                branch = by_id.get(branch_id)
                if cert is None or branch is None or not branch.verdict.holds or branch.rsr_cert is not None:
                    continue
                branch.rsr_cert = cert
                updated += 1
            if result.inn_generation != store.inn_generation:
                if result.inn_reaches:
                    logger.debug(f"Discarding interval reaches for superseded interval network {result.inn_generation}")
                continue
            for branch_id, (region, reach) in result.inn_reaches.items():
                branch = by_id.get(branch_id)
                if branch is None or not branch.region.equals(region):
                    continue
                branch.inn_reach = reach
                branch.inn_region = region
                branch.inn_generation = result.inn_generation
                updated += 1
        if updated:
            logger.debug(f"Swapped in {updated} background results")
        return updated

    def wait(self):
        """Block until every scheduled construction has finished"""
        futures, self._futures = self._futures, []
        for future in futures:
            future.result()

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


def background_refresh(store: BranchStore, net: Network, spec: OutputSpec, cfg: EngineConfig,
                       refresher: CertificateRefresher = None, t: int = None) -> CertificateRefresher:
    """Schedule certificate construction against a snapshot of ``store``.

    The returned refresher is the handle: ``wait()`` blocks on the pool and
    ``apply(store)`` swaps finished results in between steps.
    """
    refresher = refresher or CertificateRefresher(cfg)
    refresher.request(store, net, spec, store.origin_time if t is None else t)
    return refresher
