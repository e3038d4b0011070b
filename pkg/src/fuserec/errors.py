"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems -> 1, data problems -> 2,
numerical aborts -> 3. Plain ValueError/IndexError mark violated call
contracts and are treated as usage errors at the CLI boundary.
"""


class FuseRecError(Exception):
    """Base class for package-specific errors."""


class ConfigError(FuseRecError):
    """Bad or inconsistent configuration (exit code 1)."""


class DataError(FuseRecError):
    """Malformed input data: parse errors, format errors, missing keys (exit code 2)."""


class NumericalError(FuseRecError):
    """Non-finite value encountered during training (exit code 3)."""
