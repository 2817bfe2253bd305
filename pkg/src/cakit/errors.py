"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid module or network configuration (bad reduction ratio, group count, kernel size...)."""


class DataFormatError(ValueError):
    """Malformed dataset or layout file: bad magic, truncated payload, out-of-range label."""


class CheckpointError(ValueError):
    """Malformed checkpoint: bad magic, version mismatch, hash mismatch."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss and was stopped."""
