import json
import logging
from enum import Enum
from pathlib import Path
from typing import FrozenSet, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.errors import InvalidInputError, ScenarioParseError

logger = logging.getLogger(__name__)


class Accelerator(str, Enum):
    BMI = "bmi"
    RSR = "rsr"
    LB = "lb"
    BMW = "bmw"
    INN = "inn"
    IC = "ic"


# order used for method labels
ACCELERATOR_ORDER = [Accelerator.BMI, Accelerator.BMW, Accelerator.LB, Accelerator.RSR, Accelerator.INN, Accelerator.IC]


def parse_accelerators(value: Union[None, str, List[str], FrozenSet]) -> FrozenSet[Accelerator]:
    """Parse ``"bmi,lb"``, ``"BMI+LB"``, ``"none"`` or a list of names"""
    if value is None:
        return frozenset()
    if isinstance(value, str):
        value = value.replace("+", ",").split(",")
    names = [str(getattr(v, "value", v)).strip().lower() for v in value]
    names = [n for n in names if n and n != "none"]
    try:
        return frozenset(Accelerator(n) for n in names)
    except ValueError:
        valid = ", ".join(a.value for a in Accelerator)
        raise InvalidInputError(f"unknown accelerator in {names}; valid names are {valid}")


class VerifyLimits(BaseModel):
    """Computation limit of the reach+branch loop"""

    model_config = ConfigDict(frozen=True)

    max_branches: int = Field(1000, ge=1)
    max_depth: int = Field(30, ge=1)
    time_budget: Optional[float] = Field(None, gt=0, description="seconds")
    min_branches: int = Field(1, ge=1, description="pre-split the input until this many regions exist")


class EngineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    accel_flags: FrozenSet[Accelerator] = frozenset()
    rebranch_coverage_threshold: float = Field(0.95, ge=0.0, le=1.0)
    rsr_offset: float = Field(1e-3, ge=0.0)
    inn_radius_scale: float = Field(5.0, ge=0.0)
    coverage_samples: int = Field(2000, ge=1)
    seed: int = 0
    synchronous: bool = True
    max_workers: int = Field(4, ge=1)
    counterexample_samples: int = Field(64, ge=0)
    limits: VerifyLimits = Field(default_factory=VerifyLimits)
    n_jobs: int = 1

    @field_validator("accel_flags", mode="before")
    @classmethod
    def _parse_flags(cls, value):
        try:
            return parse_accelerators(value)
        except InvalidInputError as e:
            raise ValueError(str(e))

    def has(self, accelerator: Accelerator) -> bool:
        return accelerator in self.accel_flags

    @property
    def label(self) -> str:
        """Method name such as ``BMI+LB+RSR``; ``None`` for the baseline"""
        names = [a.value.upper() for a in ACCELERATOR_ORDER if a in self.accel_flags]
        return "+".join(names) if names else "None"

    @property
    def is_baseline(self) -> bool:
        return not self.accel_flags


class PlannerInput(BaseModel):
    """Timing of background certificate construction against the change rate"""

    build_time: float = Field(..., gt=0)
    change_gap: float = Field(..., gt=0)
    headroom: List[float] = Field(..., min_length=1)

    @field_validator("headroom")
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if any(h <= 0 for h in value):
            raise ValueError("headroom entries must be positive")
        return value


class ScenarioKind(str, Enum):
    DOMAIN_SHIFT = "domain_shift"
    NETWORK_UPDATES = "network_updates"
    FINE_TUNING = "fine_tuning"
    DIMMING = "dimming"


class NetworkSource(BaseModel):
    """Either a network file or a seeded generator description"""

    file: Optional[str] = None
    depth: int = Field(3, ge=1)
    width: int = Field(50, ge=1)
    seed: int = 0


class ScenarioParams(BaseModel):
    v_x: float = Field(1.0, gt=0)
    a_x: float = Field(0.1, gt=0)
    v_y: float = Field(5.0, gt=0)
    a_y: float = Field(10.0, gt=0)
    shift_rate: float = Field(1e-3, ge=0)
    changing_dims: int = Field(1, ge=1, le=3)
    change_factor: float = Field(1.0, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    branches: int = Field(100, ge=1)
    n_pixels: int = Field(16, ge=1)
    n_classes: int = Field(2, ge=2)
    dim_rate: float = Field(1.0 / 256, ge=0)
    radius: float = Field(2.0 / 256, ge=0)
    update_batch: int = Field(8, ge=1)
    precondition_attempts: int = Field(20, ge=1)
    precondition_coverage: float = Field(0.95, ge=0, le=1)


class ScenarioSpec(BaseModel):
    kind: ScenarioKind
    horizon: int = Field(50, ge=1)
    network: NetworkSource = Field(default_factory=NetworkSource)
    params: ScenarioParams = Field(default_factory=ScenarioParams)
    seed: int = 0

    @property
    def is_robotics(self) -> bool:
        return self.kind is not ScenarioKind.DIMMING

    def with_updates(self, **changes) -> "ScenarioSpec":
        """Copy with top-level fields or ``params.<name>``/``network.<name>`` overrides"""
        data = self.model_dump()
        for key, value in changes.items():
            if "." in key:
                section, name = key.split(".", 1)
                data[section][name] = value
            else:
                data[key] = value
        return ScenarioSpec.model_validate(data)

    def cache_key(self) -> str:
        return self.model_dump_json()


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    """Read a scenario JSON file; errors carry the line or the offending field"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioParseError(str(path), f"cannot read file: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(str(path), e.msg, line=e.lineno)
    try:
        scenario = ScenarioSpec.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ScenarioParseError(str(path), first["msg"], field=field)
    if scenario.network.file and not Path(scenario.network.file).is_absolute():
        resolved = str((path.parent / scenario.network.file).resolve())
        scenario = scenario.with_updates(**{"network.file": resolved})
    logger.info(f"Loaded {scenario.kind.value} scenario from {path} (horizon {scenario.horizon})")
    return scenario
