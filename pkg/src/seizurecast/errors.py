"""Exception hierarchy shared across the package."""


class SeizureCastError(Exception):
    """Base class for all package errors."""


class DimensionError(SeizureCastError, ValueError):
    pass


class ContractError(SeizureCastError, ValueError):
    """A documented precondition was violated."""


class LengthError(SeizureCastError, ValueError):
    def __init__(self, required: int, available: int, what: str = "frames"):
        self.required = required
        self.available = available
        super().__init__(f"need {required} {what}, only {available} available")


class FormatError(SeizureCastError, ValueError):
    """A binary container failed validation.

    ``field`` names the header field or section that was inconsistent.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MagicError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class ConfigError(SeizureCastError, ValueError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class ProtocolError(SeizureCastError, ValueError):
    pass


class MetricUndefinedError(SeizureCastError, ValueError):
    pass


class CompatibilityError(SeizureCastError, ValueError):
    def __init__(self, differing: dict):
        self.differing = differing
        desc = ", ".join(f"{k}: {a!r} != {b!r}" for k, (a, b) in sorted(differing.items()))
        super().__init__(f"checkpoint/model config mismatch ({desc})")


class StaleCacheError(SeizureCastError):
    pass


class EpisodeFailure(SeizureCastError, RuntimeError):
    """Raised when one evaluation episode fails; carries its seed for reproduction."""

    def __init__(self, seed: int, context: str, cause: BaseException):
        self.seed = seed
        self.context = context
        super().__init__(f"episode {context} failed (seed={seed}): {cause!r}")
