import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from models.config import get_settings
from models.network import Network
from models.schemas import EngineConfig, ScenarioSpec, VerifyLimits
from models.verification import BranchStore, Status, StepReport
from services.branching_service import coverage_rate, reach_and_branch
from services.online_service import OnlineVerifier
from services.scenario_service import generate, generate_all, scenario_limits

logger = logging.getLogger(__name__)


@dataclass
class OnceResult:
    status: Status
    store: BranchStore
    coverage: Optional[float]

    def to_dict(self, branches: bool = False) -> Dict[str, Any]:
        data = {
            "status": self.status.value,
            "coverage": self.coverage,
            "n_branches": len(self.store.branches),
            "n_hold": len(self.store.hold_branches),
            "reach_calls": self.store.reach_calls,
            "witness": None if self.store.witness is None else self.store.witness.tolist(),
        }
        if branches:
            data["store"] = self.store.to_dict()
        return data


@dataclass
class OnlineResult:
    config: EngineConfig
    reports: List[StepReport]

    @property
    def status(self) -> Status:
        statuses = [r.step_status for r in self.reports]
        return Status.VIOLATED if Status.VIOLATED in statuses else Status.combine(statuses)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.config.label,
            "status": self.status.value,
            "steps": [r.to_row() for r in self.reports],
            "witnesses": [r.witness_record() for r in self.reports if r.witness is not None],
        }


class VerificationService:
    """Single-shot and streaming verification of a scenario"""

    def __init__(self):
        self.settings = get_settings()
        logger.info("Verification service initialized")

    def verify_once(self, spec: ScenarioSpec, t: int = 0, net: Network = None,
                    limits: VerifyLimits = None, n_jobs: int = 1) -> OnceResult:
        input_region, scenario_net, output = generate(spec, t)
        net = net or scenario_net
        limits = scenario_limits(spec, limits)
        status, store = reach_and_branch(input_region, net, output, limits, seed=spec.seed,
                                         n_jobs=n_jobs, time_index=t)
        coverage = coverage_rate(store, input_region, self.settings.coverage_samples, spec.seed)
        logger.info(f"verify-once t={t}: {status.value}, {len(store.branches)} branches, coverage {coverage:.3f}")
        return OnceResult(status, store, coverage)

    def verify_online(self, spec: ScenarioSpec, cfg: EngineConfig, steps: int = None,
                      net: Network = None) -> OnlineResult:
        """Stream the scenario through one verifier, cold start included"""
        cfg = cfg.model_copy(update={"limits": scenario_limits(spec, cfg.limits)})
        problems = generate_all(spec, steps)
        with OnlineVerifier(cfg) as verifier:
            for t, (input_region, scenario_net, output) in enumerate(problems):
                verifier.step(t, input_region, net or scenario_net, output)
            if not cfg.synchronous:
                verifier.refresher.wait()
            return OnlineResult(cfg, list(verifier.reports))


# Global verification service instance
_verification_service = None


def get_verification_service() -> VerificationService:
    """Get or create the verification service instance"""
    global _verification_service
    if _verification_service is None:
        _verification_service = VerificationService()
    return _verification_service
