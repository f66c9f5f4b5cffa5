"""Exception types shared across the package."""

__all__ = ["DomainError", "KernelError", "SamplerError", "ConfigError", "CsvFormatError"]


class DomainError(ValueError):
    """An argument violates a documented precondition."""


class KernelError(RuntimeError):
    """The transition kernel could not be formed (singular H_t, failed Cholesky)."""


class SamplerError(RuntimeError):
    """A sampler produced or received a non-finite state."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class CsvFormatError(ValueError):
    """A CSV input could not be parsed; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = int(line_no)
