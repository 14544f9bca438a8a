import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from models.errors import InvalidInputError
from models.schemas import Accelerator, EngineConfig, ScenarioKind, ScenarioSpec
from models.verification import STEP_CSV_COLUMNS, Status, StepReport
from services.online_service import OnlineVerifier
from services.scenario_service import generate_all, scenario_limits

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["method", "mean_time_ms", "mean_coverage", "steps_hold", "steps_unknown", "steps_violated"]

SCALABILITY_VARIABLES = {
    "depth": "network.depth",
    "width": "network.width",
    "branches": "params.branches",
    "changing_dims": "params.changing_dims",
    "change_rate": "params.change_factor",
}

TRADEOFF_KNOBS = {
    # knob -> (accelerator it tunes, management it sits on)
    "inn_radius_scale": (Accelerator.INN, Accelerator.BMW),
    "rsr_offset": (Accelerator.RSR, Accelerator.BMI),
}

DEFAULT_ABLATIONS = {
    ScenarioKind.DOMAIN_SHIFT: ["none", "bmi", "bmi,lb", "bmi,rsr", "bmi,lb,rsr"],
    ScenarioKind.DIMMING: ["none", "bmi", "bmi,lb", "bmi,rsr", "bmi,lb,rsr"],
    ScenarioKind.NETWORK_UPDATES: ["none", "bmw", "bmw,inn"],
    ScenarioKind.FINE_TUNING: ["none", "bmw", "bmw,inn", "bmw,inn,ic"],
}


def default_configs(kind: ScenarioKind, base: EngineConfig = None) -> List[EngineConfig]:
    """Ablation ladder for a scenario kind, baseline first"""
    base = base or EngineConfig()
    return [base.model_copy(update={"accel_flags": EngineConfig(accel_flags=flags).accel_flags})
            for flags in DEFAULT_ABLATIONS[kind]]


@dataclass
class MethodSummary:
    method: str
    mean_time_ms: float
    mean_coverage: Optional[float]
    steps_hold: int
    steps_unknown: int
    steps_violated: int
    full_reach_calls: int = 0
    incremental_calls: int = 0
    cold_start_ms: float = 0.0

    @classmethod
    def from_steps(cls, label: str, steps: List[StepReport], cold_start: float = 0.0) -> "MethodSummary":
        coverages = [s.coverage for s in steps if s.coverage is not None]
        statuses = [s.step_status for s in steps]
        return cls(
            method=label,
            mean_time_ms=float(np.mean([s.wall_time for s in steps]) * 1000.0) if steps else 0.0,
            mean_coverage=float(np.mean(coverages)) if coverages else None,
            steps_hold=statuses.count(Status.HOLD),
            steps_unknown=statuses.count(Status.UNKNOWN),
            steps_violated=statuses.count(Status.VIOLATED),
            full_reach_calls=sum(s.full_reach_calls for s in steps),
            incremental_calls=sum(s.incremental_calls for s in steps),
            cold_start_ms=cold_start * 1000.0,
        )

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class ExperimentReport:
    """Per-method averages over the timed steps plus the per-step records"""

    scenario: ScenarioSpec
    rows: List[MethodSummary] = field(default_factory=list)
    steps: Dict[str, List[StepReport]] = field(default_factory=dict)

    def row(self, method: str) -> MethodSummary:
        for summary in self.rows:
            if summary.method == method:
                return summary
        raise KeyError(method)

    @property
    def statuses(self) -> List[Status]:
        return [s.step_status for reports in self.steps.values() for s in reports]

    @property
    def witnesses(self) -> List[Dict[str, Any]]:
        return [dict(s.witness_record(), method=method)
                for method, reports in self.steps.items() for s in reports if s.witness is not None]

    def to_frame(self, counters: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame([r.to_dict() for r in self.rows])
        if frame.empty:
            return pd.DataFrame(columns=REPORT_COLUMNS)
        return frame if counters else frame[REPORT_COLUMNS]

    def steps_frame(self) -> pd.DataFrame:
        records = [dict(method=method, **s.to_row()) for method, reports in self.steps.items() for s in reports]
        return pd.DataFrame(records, columns=["method"] + STEP_CSV_COLUMNS)

    def to_csv(self, path: Union[str, Path], steps_path: Union[str, Path] = None) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        steps_path = Path(steps_path) if steps_path else path.with_name(f"{path.stem}_steps.csv")
        self.steps_frame().to_csv(steps_path, index=False)
        logger.info(f"Wrote report to {path} and per-step records to {steps_path}")
        return steps_path

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.model_dump(),
            "rows": [r.to_dict() for r in self.rows],
            "steps": {m: [s.to_row() for s in reports] for m, reports in self.steps.items()},
            "witnesses": self.witnesses,
        }


class BenchmarkService:
    def __init__(self):
        logger.info("Benchmark service initialized")

    def run_experiment(self, spec: ScenarioSpec, configs: Sequence[EngineConfig],
                       horizon: int = None) -> ExperimentReport:
        """Cold-start every config at t=0 untimed, then time steps 1..horizon.

        Scenario generation happens before any clock starts.
        """
        if not configs:
            raise InvalidInputError("run_experiment needs at least one config")
        problems = generate_all(spec, horizon)
        report = ExperimentReport(scenario=spec)
        for cfg in configs:
            cfg = cfg.model_copy(update={"limits": scenario_limits(spec, cfg.limits), "seed": spec.seed})
            label = cfg.label
            with OnlineVerifier(cfg) as verifier:
                cold = verifier.step(0, *problems[0])
                timed = [verifier.step(t, *problems[t]) for t in range(1, len(problems))]
            summary = MethodSummary.from_steps(label, timed, cold.wall_time)
            if summary.steps_violated:
                logger.warning(f"{label}: {summary.steps_violated} violated steps")
            report.rows.append(summary)
            report.steps[label] = timed
            logger.info(f"{spec.kind.value} {label}: {summary.mean_time_ms:.3f} ms/step, "
                        f"coverage {summary.mean_coverage}")
        return report

    def sweep_scalability(self, base: ScenarioSpec, variable: str, values: Sequence[Any],
                          configs: Sequence[EngineConfig] = None, horizon: int = None) -> pd.DataFrame:
        """Ablation per value of ``variable`` with acceleration rate ``T0 / T1 - 1`` against the baseline"""
        if variable not in SCALABILITY_VARIABLES:
            raise InvalidInputError(f"unknown sweep variable '{variable}'; use one of {sorted(SCALABILITY_VARIABLES)}")
        if not values:
            raise InvalidInputError("sweep needs at least one value")
        configs = list(configs) if configs else default_configs(base.kind)
        if not any(c.is_baseline for c in configs):
            configs.insert(0, EngineConfig())
        records = []
        for value in values:
            spec = base.with_updates(**{SCALABILITY_VARIABLES[variable]: value})
            report = self.run_experiment(spec, configs, horizon)
            baseline = report.row("None").mean_time_ms
            for summary in report.rows:
                rate = baseline / summary.mean_time_ms - 1.0 if summary.mean_time_ms > 0 else math.nan
                records.append({
                    "variable": variable,
                    "value": value,
                    "method": summary.method,
                    "mean_time_ms": summary.mean_time_ms,
                    "mean_coverage": summary.mean_coverage,
                    "acceleration_rate": rate,
                    "full_reach_calls": summary.full_reach_calls,
                })
        return pd.DataFrame(records)

    def sweep_tradeoff(self, base: ScenarioSpec, knob: str, values: Sequence[float],
                       config: EngineConfig = None, horizon: int = None) -> pd.DataFrame:
        """Time and coverage per knob value; the first row is the same management without the knob's accelerator"""
        if knob not in TRADEOFF_KNOBS:
            raise InvalidInputError(f"unknown trade-off knob '{knob}'; use one of {sorted(TRADEOFF_KNOBS)}")
        values = list(values)
        if not values:
            raise InvalidInputError("sweep needs at least one value")
        if any(b < a for a, b in zip(values, values[1:])):
            raise InvalidInputError(f"{knob} values must be sorted ascending")
        accelerator, management = TRADEOFF_KNOBS[knob]
        config = config or EngineConfig()
        flags = set(config.accel_flags) | {management}
        if knob == "inn_radius_scale" and base.kind is ScenarioKind.FINE_TUNING:
            flags.add(Accelerator.IC)
        reference = config.model_copy(update={"accel_flags": frozenset(flags - {accelerator})})
        tuned = [config.model_copy(update={"accel_flags": frozenset(flags | {accelerator}), knob: float(v)})
                 for v in values]

        records = []
        summary = self.run_experiment(base, [reference], horizon).rows[0]
        records.append({"knob": knob, "value": None, "method": summary.method,
                        "mean_time_ms": summary.mean_time_ms, "mean_coverage": summary.mean_coverage})
        for value, cfg in zip(values, tuned):
            summary = self.run_experiment(base, [cfg], horizon).rows[0]
            records.append({"knob": knob, "value": value, "method": summary.method,
                            "mean_time_ms": summary.mean_time_ms, "mean_coverage": summary.mean_coverage})
        return pd.DataFrame(records)


# Global benchmark service instance
_benchmark_service = None


def get_benchmark_service() -> BenchmarkService:
    """Get or create the benchmark service instance"""
    global _benchmark_service
    if _benchmark_service is None:
        _benchmark_service = BenchmarkService()
    return _benchmark_service
