"""Exception hierarchy.

Three branches map onto the CLI exit codes: input problems (1), numerical
failures (2), and configuration mistakes (3). Library code raises the most
specific class available; the CLI only looks at ``exit_code``.
"""


class EsfError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputError(EsfError):
    """Bad or degenerate input data (files, arrays, dimensions)."""

    exit_code = 1


class NumericalError(EsfError):
    """A numerical procedure failed (factorization, optimizer, eigensolver)."""

    exit_code = 2


class ConfigError(EsfError):
    """Inconsistent or unsupported configuration."""

    exit_code = 3


# ---- input-data errors -----------------------------------------------------

class DegenerateGeometryError(InputError):
    """All sites coincide, so no length scale can be derived."""


class InsufficientSampleError(InputError):
    """Fewer samples than coefficients (N_c <= K)."""


class ProfileDegenerateError(InputError):
    """The weighted sample mass is too small to profile the noise variance."""


class UndefinedStatisticError(InputError):
    """A statistic is undefined for this input (e.g. Moran coefficient of a
    constant vector)."""


class ArchiveError(InputError):
    """A model archive is unreadable: wrong version or failed checksum."""


# ---- numerical errors ------------------------------------------------------

class BasisEmptyError(NumericalError):
    """The doubly centered connectivity matrix has no usable positive
    eigenvalue; the kernel is degenerate."""


class SingularSystemError(NumericalError):
    """The coefficient block system is numerically singular.

    ``block`` names the covariate whose block made factorization fail.
    """

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block

    def __reduce__(self):
        return type(self), (self.args[0], self.block)


class NonFiniteLikelihoodError(NumericalError):
    """The likelihood became non-finite during optimization.

    Carries ``last_valid``, a ``(params_vector, loglik)`` tuple for the last
    successfully evaluated iterate (or ``None`` if there was none).
    """

    def __init__(self, message, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid

    def __reduce__(self):
        return type(self), (self.args[0], self.last_valid)


# ---- configuration errors --------------------------------------------------

class CoverageError(ConfigError):
    """Some site has zero total weight, so no sub-model covers it."""
