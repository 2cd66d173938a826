"""Exception hierarchy shared by the solver modules."""


class AleIdpError(Exception):
    """Base class for all package errors."""


class MeshInvalidError(AleIdpError):
    """A cell has a non-positive Jacobian determinant."""

    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = [] if cells is None else list(cells)


class AssemblyError(AleIdpError):
    """Stencil assembly produced an unusable quantity (e.g. zero lumped mass)."""


class PeriodicPairingError(AleIdpError):
    """Nodes on opposite periodic faces could not be matched."""


class AdmissibilityError(AleIdpError):
    """A state outside the admissible set was handed to a flux evaluation."""


class NumericalError(AleIdpError):
    """NaN/Inf detected in an intermediate quantity."""


class StepRejected(AleIdpError):
    """A single time step failed one of its a-posteriori checks.

    The caller is expected to retry with a smaller time step.
    """

    def __init__(self, reason, detail=None):
        super().__init__(reason if detail is None else f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


class SolverError(AleIdpError):
    """Hard failure: the step was rejected too many times."""

    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = [] if reports is None else list(reports)


class InvariantViolation(AleIdpError):
    """An accepted state left the invariant domain."""


class DegenerateStepError(AleIdpError):
    """A mesh-motion request that needs a positive time step got dt <= 0."""
