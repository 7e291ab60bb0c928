"""Exception hierarchy shared across the package.

Every exception carries a stable machine-readable ``code`` which the CLI
surfaces in its error reports.
"""


class SarMEError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class InvalidWeightsError(SarMEError):
    code = "invalid-weights"


class DegenerateDistanceError(SarMEError):
    code = "degenerate-distance"


class AsymmetricDeltaError(SarMEError):
    code = "asymmetry"


class NotPSDError(SarMEError):
    code = "not-psd"


class NonInvertibleGramError(SarMEError):
    """Raised when X'X - sum(Omega_i) is numerically singular (cf. the
    bounded-inverse assumption on the corrected Gram matrix)."""

    code = "noninvertible-corrected-gram"


class NegativeProfileVarianceError(SarMEError):
    code = "negative-profile-variance"


class SingularSError(SarMEError):
    code = "singular-S"


class NoConvergenceError(SarMEError):
    code = "no-convergence"


class InsufficientReplicatesError(SarMEError):
    code = "insufficient-replicates"


class InsufficientValidationError(SarMEError):
    code = "insufficient-validation"


class RankDeficientEmbeddingError(SarMEError):
    code = "rank-deficient-embedding"


class DegenerateEmbeddingError(SarMEError):
    code = "degenerate-embedding"


class SingularInformationError(SarMEError):
    code = "singular-information"


class InvalidCError(SarMEError):
    code = "invalid-C"


class InvalidProbabilityError(SarMEError):
    code = "invalid-probability"


class InvalidCovarianceError(SarMEError):
    code = "invalid-covariance"


class ConfigError(SarMEError):
    """Invalid simulation/CLI configuration (schema violations)."""

    code = "invalid-config"
