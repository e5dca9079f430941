"""Exception types shared across the package."""


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition (shapes, symmetry, definiteness)."""


class AssumptionViolation(ArithmeticError):
    """The blended Hessian lost non-singularity / definiteness along the homotopy.

    Carries the homotopy value (``beta``) and, when known, the pseudo-time ``lam``.
    """

    def __init__(self, message, beta=None, lam=None):
        super().__init__(message)
        self.beta = beta
        self.lam = lam


class MeasurementError(ValueError):
    """Measurement model could not be evaluated (e.g. target on top of a sensor)."""


class BracketError(RuntimeError):
    """Shooting bracket never straddled the far boundary condition."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FlowError(RuntimeError):
    """Particle integration produced non-finite states or hit a singular Hessian."""

    def __init__(self, message, lam=None, particle=None):
        super().__init__(message)
        self.lam = lam
        self.particle = particle
