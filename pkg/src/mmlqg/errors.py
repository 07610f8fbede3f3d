"""Exception hierarchy.

Exit-code mapping used by the CLI: SchemaError -> 2, NumericalError and
subclasses -> 3, AssumptionViolationError -> 4.
"""


class MmlqgError(Exception):
    """Base class for all package errors."""


class SchemaError(MmlqgError):
    """Malformed configuration or inconsistent shapes.

    The message names the offending key or field, with a JSON-path style
    location (``$.major.A0``) when the error comes from a config document.
    """


class OutOfRangeError(MmlqgError, ValueError):
    """Time query outside the grid interval."""


class NumericalError(MmlqgError):
    """Base for failures of the numerical machinery."""


class IntegrationDivergedError(NumericalError):
    """Non-finite value produced during an ODE sweep.

    Carries the node index and time at which the sweep first left the
    finite range.
    """

    def __init__(self, message, node=None, time=None):
        super().__init__(message)
        self.node = node
        self.time = time


class RiccatiBlowupError(NumericalError):
    """Riccati sweep diverged; reports the last finite node."""

    def __init__(self, message, node=None, time=None):
        super().__init__(message)
        self.node = node
        self.time = time


class FixedPointError(NumericalError):
    """Consistency iteration failed to converge; carries the residual trace."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class AreSolveError(NumericalError):
    """No stationary Riccati solution found within the horizon cap."""


class DivergedPathError(NumericalError):
    """A simulated path left the finite range; carries the path id."""

    def __init__(self, message, path=None, node=None):
        super().__init__(message)
        self.path = path
        self.node = node


class DimensionGuardError(SchemaError):
    """Requested joint-state dimension exceeds the tractability guard."""


class UnsupportedOracleError(MmlqgError):
    """Oracle invoked outside its validity domain (e.g. nonzero noise)."""


class AssumptionViolationError(MmlqgError):
    """A model assumption (convexity, detectability, stability) fails.

    Carries the structured report that identified the violation.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
