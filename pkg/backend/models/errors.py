class VerificationError(Exception):
    """Base class for every error raised by the verification engine"""


class InvalidInputError(VerificationError, ValueError):
    """Shapes, dimensions or parameter values are inconsistent"""


class SolverFailureError(VerificationError):
    """The simplex solver broke down numerically or hit its iteration cap"""


class EmptySetError(VerificationError):
    """An operation that needs a feasible set received an empty one"""


class CapabilityError(VerificationError):
    """The requested computation exceeds a configured capability limit"""


class InvalidStateError(VerificationError):
    """An operation was called on an object in the wrong state"""


class CannotSplitError(VerificationError):
    """A branch region is too thin to be bisected"""


class EstimationError(VerificationError):
    """A sampling estimate could not be formed"""


class InfeasibleDeadlineError(VerificationError):
    """Background construction cannot keep up with the change rate"""


class ScenarioParseError(InvalidInputError):
    """A scenario or network file could not be parsed"""

    def __init__(self, path: str, detail: str, line: int = None, field: str = None):
        self.path = path
        self.line = line
        self.field = field
        location = path
        if line is not None:
            location += f":{line}"
        if field:
            location += f" [{field}]"
        super().__init__(f"{location}: {detail}")
