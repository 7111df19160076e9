"""Exception hierarchy shared by all modules."""


class IlcDpdError(Exception):
    """Base class for all toolkit errors."""


class RejectedInputError(IlcDpdError, ValueError):
    """Input data violates a precondition (non-finite, wrong shape, ...)."""


class UndefinedStatisticError(IlcDpdError, ValueError):
    """A statistic is undefined for this signal (e.g. PAPR of all zeros)."""


class GenerationFailedError(IlcDpdError, RuntimeError):
    """Signal generation could not satisfy the requested constraints."""


class DegenerateExcitationError(IlcDpdError, RuntimeError):
    """A controlled bin carries no usable excitation energy."""

    def __init__(self, bin_index: int, message: str | None = None):
        self.bin_index = bin_index
        super().__init__(message or f"degenerate excitation at bin {bin_index}")


class UnusableBlaError(IlcDpdError, RuntimeError):
    """Every controlled bin of the BLA fell below the inversion gain floor."""


class DivergenceError(IlcDpdError, RuntimeError):
    """The ILC update produced a non-finite value."""


class IllConditionedError(IlcDpdError, RuntimeError):
    """Least-squares problem is rank deficient; raise ridge or lower orders."""


class PlantError(IlcDpdError, RuntimeError):
    """The plant failed to produce a valid output."""


class ProtocolError(IlcDpdError, RuntimeError):
    """Wire-protocol violation (bad frame, count mismatch, remote ERROR)."""

    def __init__(self, message: str, code: str | None = None):
        self.code = code
        super().__init__(message)


class ConnectionFailedError(IlcDpdError, ConnectionError):
    """Remote plant is unreachable or the request timed out."""


class ConfigError(IlcDpdError, ValueError):
    """Experiment configuration is invalid."""
