import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from models.errors import CapabilityError, EmptySetError, InvalidInputError, SolverFailureError

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-12
DEFAULT_VERTEX_CAP = 20


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    """Copy values into a read-only float64 array of the requested rank"""
    try:
        arr = np.array(values, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} is not numeric: {e}")
    if ndim == 1:
        arr = arr.reshape(-1)
    elif arr.ndim != ndim:
        raise InvalidInputError(f"{name} must have rank {ndim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IntervalBox:
    """Axis-aligned box ``[lo, hi]``; empty sets are never encoded as inverted bounds"""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lo, 1, "lo")
        hi = _frozen(self.hi, 1, "hi")
        if lo.size == 0 or lo.shape != hi.shape:
            raise InvalidInputError(f"box bounds must be non-empty and equal length, got {lo.size} and {hi.size}")
        if np.any(lo > hi):
            raise InvalidInputError("box has inverted bounds; use EmptySetError for empty sets")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Tuple[float, float]]) -> "IntervalBox":
        pairs = np.array(bounds, dtype=np.float64).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1])

    @classmethod
    def point(cls, x) -> "IntervalBox":
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def contains(self, other: "IntervalBox", tol: float = 0.0) -> bool:
        """True iff ``other`` lies inside this box component-wise"""
        if other.dim != self.dim:
            raise InvalidInputError(f"dimension mismatch: {other.dim} vs {self.dim}")
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def contains_points(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo - tol) & (points <= self.hi + tol), axis=1)

    def iter_corners(self) -> Iterator[np.ndarray]:
        for corner in itertools.product(*zip(self.lo, self.hi)):
            yield np.array(corner)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=np.float64)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, self.dim)) * self.width

    def to_polytope(self) -> "Polytope":
        return Polytope.from_box(self)

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def __repr__(self):
        return f"IntervalBox(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


@dataclass(frozen=True, eq=False)
class Parallelotope:
    """``{x : lo <= M x <= hi}`` for an invertible ``M`` with unit-norm rows"""

    M: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        M = _frozen(self.M, 2, "M")
        lo = _frozen(self.lo, 1, "lo")
        hi = _frozen(self.hi, 1, "hi")
        if M.shape != (lo.size, lo.size) or lo.shape != hi.shape:
            raise InvalidInputError(f"parallelotope needs a square frame, got {M.shape} with {lo.size} bounds")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_box(cls, box: IntervalBox) -> "Parallelotope":
        return cls(np.eye(box.dim), box.lo, box.hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @cached_property
    def is_box(self) -> bool:
        return bool(np.array_equal(self.M, np.eye(self.dim)))

    @cached_property
    def log_volume(self) -> float:
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(self.hi - self.lo)) - np.linalg.slogdet(self.M)[1])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = self.lo + rng.random((n, self.dim)) * (self.hi - self.lo)
        return u if self.is_box else np.linalg.solve(self.M, u.T).T


@dataclass(frozen=True, eq=False)
class Polytope:
    """Polytope ``{x : A x <= b}`` with rows partitioned into base and split constraints.

    Base rows describe the problem's input set and are the only rows that
    change when the input set moves; split rows are appended by branching.
    Instances are immutable, so derived quantities (bounding box, Chebyshev
    centre) are computed once and cached on the instance.
    """

    base_A: np.ndarray
    base_b: np.ndarray
    split_A: Optional[np.ndarray] = None
    split_b: Optional[np.ndarray] = None

    def __post_init__(self):
        base_A = _frozen(np.atleast_2d(np.asarray(self.base_A, dtype=np.float64)), 2, "base_A")
        base_b = _frozen(self.base_b, 1, "base_b")
        n = base_A.shape[1]
        if n == 0:
            raise InvalidInputError("polytope dimension must be at least 1")
        if self.split_A is None or np.size(self.split_A) == 0:
            split_A = _frozen(np.zeros((0, n)), 2, "split_A")
            split_b = _frozen(np.zeros(0), 1, "split_b")
        else:
            split_A = _frozen(np.atleast_2d(np.asarray(self.split_A, dtype=np.float64)), 2, "split_A")
            split_b = _frozen(self.split_b, 1, "split_b")
        if base_A.shape[0] != base_b.size or split_A.shape[0] != split_b.size:
            raise InvalidInputError("constraint matrix and constant vector lengths differ")
        if split_A.shape[1] != n:
            raise InvalidInputError(f"split rows have dimension {split_A.shape[1]}, expected {n}")
        if base_A.shape[0] + split_A.shape[0] == 0:
            raise InvalidInputError("polytope needs at least one constraint")
        object.__setattr__(self, "base_A", base_A)
        object.__setattr__(self, "base_b", base_b)
        object.__setattr__(self, "split_A", split_A)
        object.__setattr__(self, "split_b", split_b)

    # Construction

    @classmethod
    def from_box(cls, box: IntervalBox) -> "Polytope":
        eye = np.eye(box.dim)
        return cls(np.vstack([eye, -eye]), np.concatenate([box.hi, -box.lo]))

    @classmethod
    def from_bounds(cls, bounds: Sequence[Tuple[float, float]]) -> "Polytope":
        return cls.from_box(IntervalBox.from_bounds(bounds))

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[Sequence[float], float]],
                  split_rows: Sequence[Tuple[Sequence[float], float]] = ()) -> "Polytope":
        if not rows:
            raise InvalidInputError("base rows must not be empty")
        A = np.array([a for a, _ in rows], dtype=np.float64)
        b = np.array([rhs for _, rhs in rows], dtype=np.float64)
        if split_rows:
            return cls(A, b, np.array([a for a, _ in split_rows], dtype=np.float64),
                       np.array([rhs for _, rhs in split_rows], dtype=np.float64))
        return cls(A, b)

    def with_base(self, base_A: np.ndarray, base_b: np.ndarray) -> "Polytope":
        """Replace the base rows and keep every split row"""
        return Polytope(base_A, base_b, self.split_A, self.split_b)

    def with_base_of(self, other: "Polytope") -> "Polytope":
        return self.with_base(other.base_A, other.base_b)

    def with_split(self, a: np.ndarray, b: float) -> "Polytope":
        split_A = np.vstack([self.split_A, np.asarray(a, dtype=np.float64).reshape(1, -1)])
        split_b = np.append(self.split_b, float(b))
        return Polytope(self.base_A, self.base_b, split_A, split_b)

    def relaxed(self, offset) -> "Polytope":
        """Add ``offset`` (scalar or one value per row) to every constraint constant"""
        offset = np.broadcast_to(np.asarray(offset, dtype=np.float64), (self.n_rows,))
        if np.any(offset < 0):
            raise InvalidInputError("relaxation offsets must be non-negative")
        return Polytope(self.base_A, self.base_b + offset[:self.n_base],
                        self.split_A, self.split_b + offset[self.n_base:])

    # Shape

    @property
    def dim(self) -> int:
        return self.base_A.shape[1]

    @property
    def n_base(self) -> int:
        return self.base_A.shape[0]

    @property
    def n_split(self) -> int:
        return self.split_A.shape[0]

    @property
    def n_rows(self) -> int:
        return self.n_base + self.n_split

    @cached_property
    def A(self) -> np.ndarray:
        return np.vstack([self.base_A, self.split_A])

    @cached_property
    def b(self) -> np.ndarray:
        return np.concatenate([self.base_b, self.split_b])

    @property
    def base_rows(self) -> List[Tuple[np.ndarray, float]]:
        return [(a, float(rhs)) for a, rhs in zip(self.base_A, self.base_b)]

    @property
    def split_rows(self) -> List[Tuple[np.ndarray, float]]:
        return [(a, float(rhs)) for a, rhs in zip(self.split_A, self.split_b)]

    @cached_property
    def is_axis_aligned(self) -> bool:
        return bool(np.all(np.count_nonzero(self.A, axis=1) <= 1))

    def same_rows(self, other: "Polytope") -> bool:
        """True iff both polytopes use the identical constraint matrix"""
        return self.A.shape == other.A.shape and bool(np.array_equal(self.A, other.A))

    def equals(self, other: "Polytope") -> bool:
        """Row-for-row identical constraints, split partition included"""
        if self is other:
            return True
        return (self.n_base == other.n_base and self.same_rows(other)
                and bool(np.array_equal(self.b, other.b)))

    def same_base(self, other: "Polytope") -> bool:
        if self.base_A.shape != other.base_A.shape:
            return False
        return bool(np.array_equal(self.base_A, other.base_A) and np.array_equal(self.base_b, other.base_b))

    # Cached geometry

    @cached_property
    def box(self) -> IntervalBox:
        return bounding_box(self)

    @cached_property
    def proposal(self) -> Parallelotope:
        """Rejection-sampling frame: the bounding box or a tighter row-aligned parallelotope"""
        return enclosing_parallelotope(self)

    @cached_property
    def center(self) -> np.ndarray:
        if self.is_axis_aligned:
            return self.box.center
        return chebyshev_center(self)[0]

    # Membership

    def contains_point(self, x, tol: float = FEAS_TOL) -> bool:
        return contains_point(self, x, tol)

    def contains_points(self, points: np.ndarray, tol: float = FEAS_TOL) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.dim:
            raise InvalidInputError(f"points have dimension {points.shape[1]}, expected {self.dim}")
        return np.all(points @ self.A.T <= self.b + tol, axis=1)

    def sample(self, rng: np.random.Generator, n: int, max_rounds: int = 20) -> np.ndarray:
        """Uniform samples by rejection from ``proposal``; may return fewer than ``n``"""
        accepted = []
        count = 0
        for _ in range(max_rounds):
            batch = self.proposal.sample(rng, max(n, 16))
            batch = batch[self.contains_points(batch)]
            accepted.append(batch)
            count += len(batch)
            if count >= n:
                break
        points = np.vstack(accepted) if accepted else np.zeros((0, self.dim))
        return points[:n]

    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        return {
            "A": self.base_A.tolist(),
            "b": self.base_b.tolist(),
            "split_A": self.split_A.tolist(),
            "split_b": self.split_b.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Polytope":
        try:
            return cls(data["A"], data["b"], data.get("split_A"), data.get("split_b"))
        except KeyError as e:
            raise InvalidInputError(f"polytope record is missing field {e}")

    def __repr__(self):
        return f"Polytope(dim={self.dim}, base_rows={self.n_base}, split_rows={self.n_split})"


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LPSolution:
    status: LPStatus
    objective: float
    point: np.ndarray


def _pivot(T: np.ndarray, r: int, j: int):
    pivot = T[r, j]
    if abs(pivot) < PIVOT_TOL:
        raise SolverFailureError(f"pivot element {pivot:.3e} below tolerance")
    T[r] /= pivot
    column = T[:, j].copy()
    column[r] = 0.0
    T -= np.outer(column, T[r])
    T[:, j] = 0.0
    T[r, j] = 1.0
    if not np.all(np.isfinite(T[r])):
        raise SolverFailureError("non-finite tableau entries after pivot")


def _simplex(T: np.ndarray, basis: np.ndarray, obj: np.ndarray, tol: float, max_iter: int) -> LPStatus:
    """Maximize ``obj`` from the feasible basis in place (Bland's rule)"""
    m = T.shape[0]
    for _ in range(max_iter):
        reduced = obj - obj[basis] @ T[:, :-1]
        entering = np.flatnonzero(reduced > tol)
        if entering.size == 0:
            return LPStatus.OPTIMAL
        j = entering[0]
        column = T[:, j]
        positive = column > tol
        if not positive.any():
            return LPStatus.UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[positive] = T[positive, -1] / column[positive]
        ties = np.flatnonzero(ratios <= ratios.min() + tol)
        r = ties[np.argmin(basis[ties])]
        _pivot(T, r, j)
        basis[r] = j
    raise SolverFailureError(f"simplex did not converge within {max_iter} pivots")


class LinearProgram:
    """Dense two-phase primal simplex over a polytope with free variables.

    Variables are split as ``x = x+ - x-`` and every row gets a slack; rows
    with a negative constant get an artificial variable for phase 1. Phase 1
    runs once in the constructor, after which ``maximize`` can be called any
    number of times: each objective starts from the previous optimal basis,
    which stays primal feasible because only the objective changes.
    """

    def __init__(self, polytope: Polytope, tol: float = FEAS_TOL, max_iter: int = None):
        A, b = polytope.A, polytope.b
        m, n = A.shape
        self.n = n
        self.tol = tol
        self.feasible = True

        flip = b < 0
        n_art = int(flip.sum())
        n_struct = 2 * n + m
        T = np.zeros((m, n_struct + n_art + 1))
        T[:, :n] = A
        T[:, n:2 * n] = -A
        T[:, 2 * n:n_struct] = np.eye(m)
        T[:, -1] = b
        T[flip] *= -1.0
        basis = np.arange(2 * n, n_struct)
        art_rows = np.flatnonzero(flip)
        art_cols = n_struct + np.arange(n_art)
        T[art_rows, art_cols] = 1.0
        basis[art_rows] = art_cols
        self.max_iter = max_iter or 50 * (m + n_struct + n_art)

        if n_art:
            phase_one = np.zeros(n_struct + n_art)
            phase_one[art_cols] = -1.0
            _simplex(T, basis, phase_one, tol, self.max_iter)
            infeasibility = -float(phase_one[basis] @ T[:, -1])
            if infeasibility > tol * max(1.0, float(np.abs(b).max())):
                self.feasible = False
            else:
                T, basis = self._drop_artificials(T, basis, n_struct)
        rhs = T[:, -1]
        if np.any(rhs < -tol * max(1.0, float(np.abs(b).max()))):
            raise SolverFailureError("basic solution lost feasibility")
        T[:, -1] = np.maximum(rhs, 0.0)
        self._T = T
        self._basis = basis

    def _drop_artificials(self, T: np.ndarray, basis: np.ndarray, n_struct: int):
        keep = []
        for r in range(T.shape[0]):
            if basis[r] >= n_struct:
                candidates = np.flatnonzero(np.abs(T[r, :n_struct]) > self.tol)
                if candidates.size == 0:
                    # redundant row
                    continue
                _pivot(T, r, candidates[0])
                basis[r] = candidates[0]
            keep.append(r)
        T = np.hstack([T[keep, :n_struct], T[keep, -1:]])
        return T, basis[keep].copy()

    def _point(self) -> np.ndarray:
        values = np.zeros(self._T.shape[1] - 1)
        values[self._basis] = self._T[:, -1]
        return values[:self.n] - values[self.n:2 * self.n]

    def maximize(self, c) -> LPSolution:
        """Maximize ``c . x`` over the polytope"""
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        if c.size != self.n:
            raise InvalidInputError(f"objective has dimension {c.size}, expected {self.n}")
        if not self.feasible:
            return LPSolution(LPStatus.INFEASIBLE, math.nan, np.full(self.n, math.nan))
        obj = np.zeros(self._T.shape[1] - 1)
        obj[:self.n] = c
        obj[self.n:2 * self.n] = -c
        status = _simplex(self._T, self._basis, obj, self.tol, self.max_iter)
        x = self._point()
        if status is LPStatus.UNBOUNDED:
            return LPSolution(status, math.inf, x)
        return LPSolution(status, float(c @ x), x)


def lp_solve(objective, constraints: Polytope) -> LPSolution:
    """Maximize ``objective . x`` subject to every row of ``constraints``"""
    return LinearProgram(constraints).maximize(objective)


def contains_point(P: Polytope, x, tol: float = FEAS_TOL) -> bool:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != P.dim:
        raise InvalidInputError(f"point has dimension {x.size}, expected {P.dim}")
    return bool(np.all(P.A @ x <= P.b + tol))


@dataclass(frozen=True)
class Containment:
    """Outcome of a subset check; truthy iff the candidate is contained"""

    contained: bool
    empty: bool = False

    def __bool__(self):
        return self.contained


def _normalized_rows(A: np.ndarray, b: np.ndarray):
    norms = np.abs(A).max(axis=1)
    scale = np.where(norms > 0, norms, 1.0)
    return A / scale[:, None], b / scale, norms > 0


def _implied_rows(candidate: Polytope, reference: Polytope, tol: float) -> np.ndarray:
    """Reference rows implied by a positively parallel candidate row with a tighter constant"""
    Ac, bc, _ = _normalized_rows(candidate.A, candidate.b)
    Ar, br, nonzero = _normalized_rows(reference.A, reference.b)
    parallel = np.all(np.abs(Ar[:, None, :] - Ac[None, :, :]) <= PIVOT_TOL, axis=2)
    slack = tol * np.maximum(1.0, np.abs(br))
    tighter = bc[None, :] <= (br + slack)[:, None]
    implied = np.any(parallel & tighter, axis=1)
    # a zero row 0 <= b constrains nothing when b >= 0
    return np.where(nonzero, implied, br >= -slack)


def _axis_rows_box(P: Polytope) -> Tuple[np.ndarray, np.ndarray]:
    """Possibly unbounded box cut out by the single-variable rows of ``P`` alone"""
    single = np.count_nonzero(P.A, axis=1) == 1
    lo = np.full(P.dim, -np.inf)
    hi = np.full(P.dim, np.inf)
    rows, cols = np.nonzero(P.A[single])
    coef = P.A[single][rows, cols]
    bound = P.b[single][rows] / coef
    upper = coef > 0
    np.minimum.at(hi, cols[upper], bound[upper])
    np.maximum.at(lo, cols[~upper], bound[~upper])
    return lo, hi


def _box_implied(lo: np.ndarray, hi: np.ndarray, reference: Polytope, rows: np.ndarray, tol: float) -> np.ndarray:
    """Reference rows that already hold on the box ``[lo, hi]``"""
    A = reference.A[rows]
    with np.errstate(invalid="ignore"):
        worst = np.where(A > 0, A * hi, np.where(A < 0, A * lo, 0.0)).sum(axis=1)
    b = reference.b[rows]
    return np.isfinite(worst) & (worst <= b + tol * np.maximum(1.0, np.abs(b)))


def subset_check(candidate: Polytope, reference: Polytope, tol: float = FEAS_TOL) -> Containment:
    """Check ``candidate ⊆ reference`` with one LP per reference row that is not trivially implied"""
    if candidate.dim != reference.dim:
        raise InvalidInputError(f"dimension mismatch: {candidate.dim} vs {reference.dim}")
    lo, hi = _axis_rows_box(candidate)
    if np.any(lo > hi + tol * np.maximum(1.0, np.abs(hi))):
        logger.warning("Containment candidate is empty; reporting vacuous containment")
        return Containment(True, empty=True)
    pending = np.flatnonzero(~_implied_rows(candidate, reference, tol))
    if pending.size:
        pending = pending[~_box_implied(lo, hi, reference, pending, tol)]
    if pending.size == 0:
        return Containment(True)
    lp = LinearProgram(candidate, tol)
    if not lp.feasible:
        logger.warning("Containment candidate is empty; reporting vacuous containment")
        return Containment(True, empty=True)
    A, b = reference.A, reference.b
    for j in pending:
        solution = lp.maximize(A[j])
        if solution.status is LPStatus.UNBOUNDED:
            return Containment(False)
        if solution.objective - b[j] > tol * max(1.0, abs(b[j])):
            return Containment(False)
    return Containment(True)


def _axis_aligned_box(P: Polytope) -> IntervalBox:
    A, b = P.A, P.b
    n = P.dim
    hi = np.full(n, np.inf)
    lo = np.full(n, -np.inf)
    rows, cols = np.nonzero(A)
    coef = A[rows, cols]
    bound = b[rows] / coef
    upper = coef > 0
    np.minimum.at(hi, cols[upper], bound[upper])
    np.maximum.at(lo, cols[~upper], bound[~upper])
    zero_rows = np.count_nonzero(A, axis=1) == 0
    if np.any(b[zero_rows] < -FEAS_TOL):
        raise EmptySetError("polytope contains a contradictory constant row")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise InvalidInputError("polytope is unbounded; a bounding box does not exist")
    if np.any(lo > hi + FEAS_TOL * np.maximum(1.0, np.abs(hi))):
        raise EmptySetError("polytope is empty")
    return IntervalBox(np.minimum(lo, hi), hi)


def bounding_box(P: Polytope) -> IntervalBox:
    """Tightest axis-aligned box around ``P`` (closed form for boxes, 2·dim LPs otherwise)"""
    if P.is_axis_aligned:
        return _axis_aligned_box(P)
    lp = LinearProgram(P)
    if not lp.feasible:
        raise EmptySetError("cannot bound an empty polytope")
    n = P.dim
    lo = np.zeros(n)
    hi = np.zeros(n)
    for k in range(n):
        direction = np.zeros(n)
        direction[k] = 1.0
        up = lp.maximize(direction)
        down = lp.maximize(-direction)
        if up.status is LPStatus.UNBOUNDED or down.status is LPStatus.UNBOUNDED:
            raise InvalidInputError(f"polytope is unbounded along dimension {k}")
        hi[k] = up.objective
        lo[k] = -down.objective
    return IntervalBox(np.minimum(lo, hi), hi)


def _sign_normalized(rows: np.ndarray) -> np.ndarray:
    """Unit rows with the first non-zero entry positive, so ``a`` and ``-a`` coincide"""
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    first = np.argmax(np.abs(rows) > PIVOT_TOL, axis=1)
    return rows * np.sign(rows[np.arange(len(rows)), first])[:, None]


def enclosing_parallelotope(P: Polytope) -> Parallelotope:
    """Parallelotope around ``P`` spanned by its narrowest constraint directions.

    Candidates are the coordinate axes and the rows of ``P``. They are taken
    narrowest first while they stay linearly independent; the bounding box
    wins whenever the result is not smaller.
    """
    box = P.box
    frame_box = Parallelotope.from_box(box)
    if P.is_axis_aligned:
        return frame_box
    n = P.dim
    rows = P.A[np.any(P.A != 0, axis=1)]
    candidates = np.unique(np.round(np.vstack([np.eye(n), _sign_normalized(rows)]), 12), axis=0)
    lp = LinearProgram(P)
    lo = np.zeros(len(candidates))
    hi = np.zeros(len(candidates))
    for i, d in enumerate(candidates):
        if np.count_nonzero(d) == 1:
            k = int(np.argmax(np.abs(d)))
            lo[i], hi[i] = box.lo[k], box.hi[k]
            continue
        hi[i] = lp.maximize(d).objective
        lo[i] = min(-lp.maximize(-d).objective, hi[i])

    chosen: List[int] = []
    for i in np.argsort(hi - lo, kind="stable"):
        if np.linalg.matrix_rank(candidates[chosen + [i]]) > len(chosen):
            chosen.append(int(i))
            if len(chosen) == n:
                break
    frame = Parallelotope(candidates[chosen], lo[chosen], hi[chosen])
    return frame if frame.log_volume < frame_box.log_volume else frame_box


def chebyshev_center(P: Polytope) -> Tuple[np.ndarray, float]:
    """Centre and radius of the largest l-inf ball inside ``P``"""
    n = P.dim
    norms = np.abs(P.A).sum(axis=1)
    A = np.vstack([np.hstack([P.A, norms[:, None]]), np.append(np.zeros(n), -1.0)])
    b = np.append(P.b, 0.0)
    lp = LinearProgram(Polytope(A, b))
    if not lp.feasible:
        raise EmptySetError("empty polytope has no centre")
    direction = np.zeros(n + 1)
    direction[-1] = 1.0
    solution = lp.maximize(direction)
    if solution.status is LPStatus.UNBOUNDED:
        raise InvalidInputError("unbounded polytope has no Chebyshev centre")
    return solution.point[:n], float(solution.point[n])


def box_distance(S1: IntervalBox, S2: IntervalBox) -> float:
    """Exact ``max_{x' in S2} min_{x in S1} ||x' - x||_inf`` for boxes"""
    excess = np.maximum(S1.lo - S2.lo, S2.hi - S1.hi)
    return float(max(0.0, excess.max()))


def shrink_distance(S1: Polytope, S2: Polytope) -> float:
    """Upper bound on the set distance for two polytopes sharing one constraint matrix.

    Every ``x'`` in S2 is pulled toward the centre ``c`` of S1 by the largest
    factor that lands inside S1 for all rows at once; the pull length is
    bounded using the radius of S1's bounding box around ``c``.
    """
    if not S1.same_rows(S2):
        raise InvalidInputError("shrink bound needs identical constraint matrices")
    growth = S2.b - S1.b
    growing = growth > 0
    if not growing.any():
        return 0.0
    center = S1.center
    slack = np.maximum(S1.b - S1.A @ center, 0.0)
    lam = float(np.min(slack[growing] / (slack[growing] + growth[growing])))
    if lam <= 0.0:
        return math.inf
    box = S1.box
    radius = float(np.max(np.maximum(box.hi - center, center - box.lo)))
    return (1.0 - lam) * radius / lam


def vertex_distance(S1: Polytope, S2: Polytope, vertex_cap: int = DEFAULT_VERTEX_CAP,
                    stop_above: float = None) -> float:
    """Upper bound via the vertices of S2's bounding box, one epigraph LP per vertex"""
    n = S1.dim
    if n > vertex_cap:
        raise CapabilityError(
            f"vertex enumeration over {n} dimensions exceeds the cap of {vertex_cap}; "
            f"use box-only mode (axis-aligned regions) for this problem"
        )
    m = S1.n_rows
    eye = np.eye(n)
    A = np.vstack([
        np.hstack([S1.A, np.zeros((m, 1))]),
        np.hstack([eye, -np.ones((n, 1))]),
        np.hstack([-eye, -np.ones((n, 1))]),
    ])
    objective = np.zeros(n + 1)
    objective[-1] = -1.0
    worst = 0.0
    for vertex in S2.box.iter_corners():
        if S1.contains_point(vertex, tol=0.0):
            continue
        solution = LinearProgram(Polytope(A, np.concatenate([S1.b, vertex, -vertex]))).maximize(objective)
        if solution.status is not LPStatus.OPTIMAL:
            raise EmptySetError("nearest-point program has no optimum; is S1 empty?")
        worst = max(worst, -solution.objective)
        if stop_above is not None and worst > stop_above:
            break
    return worst


def set_distance_upper(S1: Polytope, S2: Polytope, method: str = "auto",
                       vertex_cap: int = DEFAULT_VERTEX_CAP, stop_above: float = None) -> float:
    """Sound upper bound on ``max_{x' in S2} min_{x in S1} ||x' - x||_inf``.

    Args:
        S1: reference set (the region at the certificate epoch)
        S2: perturbed set
        method: "box" (exact for boxes), "shrink" (shared constraint matrix),
            "vertex" (bounding-box vertices of S2) or "auto"
        vertex_cap: largest dimension for which vertex enumeration is attempted
        stop_above: the vertex path may stop once the bound exceeds this value

    Returns:
        A value at least as large as the true distance
    """
    if S1.dim != S2.dim:
        raise InvalidInputError(f"dimension mismatch: {S1.dim} vs {S2.dim}")
    if method == "auto":
        if S1.is_axis_aligned and S2.is_axis_aligned:
            method = "box"
        elif S1.same_rows(S2):
            method = "shrink"
        else:
            method = "vertex"
    if method == "box":
        return box_distance(S1.box, S2.box)
    if method == "shrink":
        return shrink_distance(S1, S2)
    if method == "vertex":
        return vertex_distance(S1, S2, vertex_cap, stop_above)
    raise InvalidInputError(f"unknown distance method '{method}'")
