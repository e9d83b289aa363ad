"""Exception types raised across the package."""


class ChirpDNPError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ChirpDNPError, ValueError):
    pass


class NonHermitianObservable(ChirpDNPError, ValueError):
    pass


class NonHermitianHamiltonian(ChirpDNPError, ValueError):
    pass


class ImaginaryResidue(ChirpDNPError, ArithmeticError):
    """Tr[O rho] came back with a non-negligible imaginary part."""


class TimeOutOfRange(ChirpDNPError, ValueError):
    pass


class ZeroNuclearLarmor(ChirpDNPError, ValueError):
    pass


class AmplitudeExceedsNuclearLarmor(ChirpDNPError, ValueError):
    pass


class NonPositiveRate(ChirpDNPError, ValueError):
    pass


class NonPositiveT2(ChirpDNPError, ValueError):
    pass


class ConvergenceFailure(ChirpDNPError, RuntimeError):
    """Step refinement did not settle within the allowed number of halvings.

    ``last_values`` holds the final two (Sz, Iz) readings that disagreed.
    """

    def __init__(self, message, last_values=None):
        super().__init__(message)
        self.last_values = last_values


class WindowCoversZQ(ChirpDNPError, ValueError):
    pass


class WindowTooNarrow(UserWarning):
    """Sweep window misses a matching condition; classification is NONE."""


class ParseError(ChirpDNPError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(ChirpDNPError, ValueError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
