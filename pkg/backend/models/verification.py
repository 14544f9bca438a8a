import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.errors import InvalidInputError
from models.geometry import IntervalBox, Polytope
from models.network import IntervalNetwork, LayerDiff, LipschitzBound, Network

logger = logging.getLogger(__name__)


class Status(str, Enum):
    HOLD = "hold"
    UNKNOWN = "unknown"
    VIOLATED = "violated"

    @classmethod
    def combine(cls, statuses: Sequence["Status"]) -> "Status":
        """Violated dominates unknown, which dominates hold"""
        statuses = list(statuses)
        if cls.VIOLATED in statuses:
            return cls.VIOLATED
        if cls.UNKNOWN in statuses:
            return cls.UNKNOWN
        return cls.HOLD


class Tag(str, Enum):
    REUSE = "reuse"
    RECOMPUTE = "recompute"


class BranchPath(str, Enum):
    REUSED = "reused"
    TOLERATED_LB = "tolerated_lb"
    TOLERATED_RSR = "tolerated_rsr"
    TOLERATED_INN = "tolerated_inn"
    INCREMENTAL = "incremental"
    RECOMPUTED = "recomputed"
    REBRANCHED = "rebranched"


@dataclass(frozen=True, eq=False)
class OutputSpec:
    """Output set ``{y : C y <= d}``"""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.array(self.C, dtype=np.float64))
        d = np.array(self.d, dtype=np.float64).reshape(-1)
        if C.size == 0 or C.shape[0] != d.size:
            raise InvalidInputError(f"output spec needs matching non-empty rows, got {C.shape} and {d.size}")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(d))):
            raise InvalidInputError("output spec contains non-finite entries")
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[Sequence[float], float]]) -> "OutputSpec":
        if not rows:
            raise InvalidInputError("output spec must have at least one row")
        return cls([c for c, _ in rows], [d for _, d in rows])

    @classmethod
    def from_bounds(cls, lo: Sequence[float] = None, hi: Sequence[float] = None) -> "OutputSpec":
        """``lo <= y <= hi``; upper rows come first, infinite bounds are skipped"""
        dim = len(hi) if hi is not None else len(lo)
        eye = np.eye(dim)
        rows = []
        if hi is not None:
            rows += [(eye[i], float(v)) for i, v in enumerate(hi) if np.isfinite(v)]
        if lo is not None:
            rows += [(-eye[i], -float(v)) for i, v in enumerate(lo) if np.isfinite(v)]
        return cls.from_rows(rows)

    @property
    def out_dim(self) -> int:
        return self.C.shape[1]

    @property
    def n_rows(self) -> int:
        return self.C.shape[0]

    @property
    def rows(self) -> List[Tuple[np.ndarray, float]]:
        return [(c, float(d)) for c, d in zip(self.C, self.d)]

    def margins(self, box: IntervalBox) -> np.ndarray:
        """``d_j - max_{y in box} c_j . y`` for every row"""
        if box.dim != self.out_dim:
            raise InvalidInputError(f"output box has dimension {box.dim}, spec expects {self.out_dim}")
        worst = np.where(self.C >= 0, self.C * box.hi, self.C * box.lo).sum(axis=1)
        return self.d - worst

    def satisfied(self, outputs: np.ndarray) -> np.ndarray:
        outputs = np.atleast_2d(outputs)
        return np.all(outputs @ self.C.T <= self.d, axis=1)

    def equals(self, other: "OutputSpec") -> bool:
        return self is other or (self.C.shape == other.C.shape
                                 and np.array_equal(self.C, other.C) and np.array_equal(self.d, other.d))

    def to_dict(self) -> Dict[str, Any]:
        return {"C": self.C.tolist(), "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OutputSpec":
        try:
            return cls(data["C"], data["d"])
        except KeyError as e:
            raise InvalidInputError(f"output spec record is missing field {e}")


@dataclass(frozen=True, eq=False)
class ReachResult:
    """Post-activation boxes per layer; ``per_layer[0]`` is the input box"""

    per_layer: Tuple[IntervalBox, ...]

    def __post_init__(self):
        per_layer = tuple(self.per_layer)
        if len(per_layer) < 2:
            raise InvalidInputError("a reach result needs the input box and at least one layer box")
        object.__setattr__(self, "per_layer", per_layer)

    @property
    def input_box(self) -> IntervalBox:
        return self.per_layer[0]

    @property
    def output(self) -> IntervalBox:
        return self.per_layer[-1]

    @property
    def penultimate(self) -> IntervalBox:
        return self.per_layer[-2]

    def to_dict(self) -> Dict[str, Any]:
        return {"per_layer": [box.to_dict() for box in self.per_layer]}


@dataclass(frozen=True, eq=False)
class Verdict:
    status: Status
    margins: np.ndarray
    witness: Optional[np.ndarray] = None

    def __post_init__(self):
        status = Status(self.status)
        margins = np.array(self.margins, dtype=np.float64).reshape(-1)
        if status is Status.HOLD and np.any(margins < 0):
            raise InvalidInputError("a hold verdict cannot carry negative margins")
        if (self.witness is not None) != (status is Status.VIOLATED):
            raise InvalidInputError("a witness is present exactly when the verdict is violated")
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "margins", margins)

    @classmethod
    def unknown(cls) -> "Verdict":
        return cls(Status.UNKNOWN, np.zeros(0))

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLD

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "margins": self.margins.tolist(),
            "witness": None if self.witness is None else np.asarray(self.witness).tolist(),
        }


@dataclass(frozen=True, eq=False)
class RelaxedCertificate:
    """A hold verdict for an enlarged region that tolerates later input drift"""

    relaxed_region: Polytope
    relaxed_reach: ReachResult
    built_at: int
    verdict: Verdict
    network: Network
    offset: float = 0.0

    def __post_init__(self):
        if not self.verdict.holds:
            raise InvalidInputError("relaxed certificates must carry a hold verdict")


@dataclass
class Branch:
    """One region of the input partition together with everything cached for it"""

    id: int
    region: Polytope
    verdict: Verdict = field(default_factory=Verdict.unknown)
    cached_reach: Optional[ReachResult] = None
    lb_delta: Optional[float] = None
    rsr_cert: Optional[RelaxedCertificate] = None
    tag: Tag = Tag.RECOMPUTE
    depth: int = 0
    # certificate epoch: time, region and network of the last full reach
    epoch: int = 0
    epoch_region: Optional[Polytope] = None
    reach_network: Optional[Network] = None
    # reach through the store's interval network, valid while the region is unchanged
    inn_reach: Optional[ReachResult] = None
    inn_region: Optional[Polytope] = None
    inn_generation: Optional[int] = None

    def copy(self, **changes) -> "Branch":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "depth": self.depth,
            "region": self.region.to_dict(),
            "verdict": self.verdict.status.value,
            "margins": self.verdict.margins.tolist(),
            "tag": self.tag.value,
            "epoch": self.epoch,
            "lb_delta": self.lb_delta,
            "has_rsr_certificate": self.rsr_cert is not None,
        }


@dataclass
class BranchStore:
    """The branch partition of the current input set and the state shared across steps"""

    branches: List[Branch]
    origin_time: int
    input_region: Polytope
    network: Network
    spec: OutputSpec
    status: Status = Status.UNKNOWN
    witness: Optional[np.ndarray] = None
    generation: int = 0
    origin_coverage: Optional[float] = None
    last_coverage: Optional[float] = None
    lipschitz: Optional[LipschitzBound] = None
    # full reach calls spent building this store
    reach_calls: int = 0
    # interval network management
    inn: Optional[IntervalNetwork] = None
    inn_generation: int = 0
    max_layer_diff: Optional[LayerDiff] = None

    @property
    def hold_branches(self) -> List[Branch]:
        return [b for b in self.branches if b.verdict.holds]

    def copy(self, **changes) -> "BranchStore":
        """Shallow copy with fresh branch objects, so the copy can be rewritten freely"""
        changes.setdefault("branches", [b.copy() for b in self.branches])
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "origin_time": self.origin_time,
            "status": self.status.value,
            "generation": self.generation,
            "origin_coverage": self.origin_coverage,
            "last_coverage": self.last_coverage,
            "branches": [b.to_dict() for b in self.branches],
        }


@dataclass(frozen=True)
class BranchOutcome:
    branch_id: int
    path: BranchPath
    status: Status


@dataclass
class StepReport:
    time_index: int
    per_branch: List[BranchOutcome]
    step_status: Status
    wall_time: float
    coverage: Optional[float] = None
    witness: Optional[np.ndarray] = None
    full_reach_calls: int = 0
    incremental_calls: int = 0

    def count(self, *paths: BranchPath) -> int:
        return sum(1 for outcome in self.per_branch if outcome.path in paths)

    def to_row(self) -> Dict[str, Any]:
        """One row of the per-step CSV"""
        return {
            "t": self.time_index,
            "status": self.step_status.value,
            "wall_ms": self.wall_time * 1000.0,
            "coverage": self.coverage,
            "n_reused": self.count(BranchPath.REUSED),
            "n_lb": self.count(BranchPath.TOLERATED_LB),
            "n_rsr": self.count(BranchPath.TOLERATED_RSR),
            "n_inn": self.count(BranchPath.TOLERATED_INN),
            "n_ic": self.count(BranchPath.INCREMENTAL),
            "n_recomputed": self.count(BranchPath.RECOMPUTED, BranchPath.REBRANCHED),
        }

    def witness_record(self) -> Optional[Dict[str, Any]]:
        if self.witness is None:
            return None
        return {"t": self.time_index, "status": self.step_status.value, "witness": np.asarray(self.witness).tolist()}


STEP_CSV_COLUMNS = ["t", "status", "wall_ms", "coverage", "n_reused", "n_lb", "n_rsr", "n_inn", "n_ic", "n_recomputed"]
