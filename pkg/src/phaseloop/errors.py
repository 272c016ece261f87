"""Exception types shared across the package."""


class PhaseloopError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(PhaseloopError, ValueError):
    """Invalid argument or configuration value."""


class DegenerateInputError(ParameterError):
    """Input carries no usable information (zero variance, empty, ...)."""


class InstabilityError(PhaseloopError, RuntimeError):
    """A fitted autoregressive model has poles on or outside the unit circle."""


class NoTriggerError(PhaseloopError, RuntimeError):
    """No target-phase crossing found inside the prediction horizon."""


class DesignError(ParameterError):
    """Rank-deficient or otherwise unusable regression design."""


class ConfigError(PhaseloopError, ValueError):
    """Malformed configuration text; message carries line/field diagnostics."""


class IntegrityError(PhaseloopError, ValueError):
    """Persisted session artifacts are inconsistent or corrupted."""


class SessionInvalidError(PhaseloopError, RuntimeError):
    """A session cannot produce a usable log (e.g. no retained baseline trials)."""


class EmptyCohortError(PhaseloopError, RuntimeError):
    """Analysis requested on a cohort with no retained sessions."""
