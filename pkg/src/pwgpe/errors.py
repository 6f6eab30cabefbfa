"""Exception hierarchy.

Every failure mode carries a short stable ``code`` used by the CLI for
diagnostics and exit-code mapping.
"""


class PwgpeError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigError(PwgpeError):
    code = "config-error"


class BasisTooLargeError(PwgpeError):
    code = "basis-too-large"


class AliasingError(PwgpeError):
    code = "aliasing-unresolvable"


class BasisMismatchError(PwgpeError):
    code = "basis-mismatch"


class DegenerateProjectorError(PwgpeError):
    code = "degenerate-projector"


class DegenerateFieldError(PwgpeError):
    code = "degenerate-field"


class NonconvergenceError(PwgpeError):
    """Iteration budget exhausted; carries the last residual norm."""

    code = "nonconvergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StagnationError(NonconvergenceError):
    code = "stagnation"


class DegenerateGroundStateError(PwgpeError):
    code = "degenerate-ground-state"


class CoercivityViolatedError(PwgpeError):
    code = "coercivity-violated"


class CorrectionTooLargeError(PwgpeError):
    code = "correction-too-large"


class NearSingularError(PwgpeError):
    """Bottom Ritz value too close to zero (or negative) for the solve."""

    code = "near-singular-bvp"

    def __init__(self, message, ritz=None):
        super().__init__(message)
        self.ritz = ritz


class IndefiniteOperatorError(PwgpeError):
    code = "indefinite-operator"

    def __init__(self, message, ritz=None):
        super().__init__(message)
        self.ritz = ritz


class DiagonalNotInvertibleError(PwgpeError):
    code = "diagonal-not-invertible"


class CertificateUnsupportedError(PwgpeError):
    code = "certificate-unsupported"
