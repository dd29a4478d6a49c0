"""Exception hierarchy shared by all modules.

Every failure raised by the library derives from ``BesselLabError`` so the CLI
can map numerical failures to one exit code and configuration failures to
another.
"""


class BesselLabError(Exception):
    """Base class for library errors."""


class ConfigError(BesselLabError):
    """Malformed or inconsistent configuration."""


class UsageError(BesselLabError):
    """A call that violates an API precondition (unknown name, empty input)."""


class NumericalError(BesselLabError):
    """Base class for failures of a numerical procedure."""


class GridMismatchError(UsageError):
    """Two grid functions live on incompatible discretizations."""


class DiagonalSingularityError(UsageError):
    """Kernel evaluated on the diagonal x = y."""


class QuadratureConvergenceError(NumericalError):
    def __init__(self, message, residual=None, location=None):
        super().__init__(message)
        self.residual = residual
        self.location = location


class CalibrationError(NumericalError):
    """No admissible kernel-bound constants on the sample."""


class DegenerateRegionError(NumericalError):
    """Region with zero discrete measure."""


class DegenerateSplitError(NumericalError):
    """Dyadic split with an empty or zero-measure child."""


class NormConvergenceError(NumericalError):
    def __init__(self, message, last_estimate=None):
        super().__init__(message)
        self.last_estimate = last_estimate


class InvariantViolationError(NumericalError):
    """A structural invariant (e.g. shift coefficient size bound) is violated."""


class DecompositionInvariantError(NumericalError):
    def __init__(self, message, prop=None, level=None):
        super().__init__(message)
        self.prop = prop
        self.level = level


class PreconditionError(NumericalError):
    """A numerical precondition (e.g. alpha too small, separation too small) fails."""


class NoComplementError(NumericalError):
    """Whitney cover requested for a set that fills the whole domain."""


class NotInH1Error(NumericalError):
    """Function fails the cancellation condition beyond tolerance."""


class NonContractionError(NumericalError):
    """epsilon * C0 >= 1 so the factorization iteration does not contract."""


class DenominatorDegeneracyError(NumericalError):
    """Adjoint Riesz image at the atom centre is too small to divide by."""
