"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and contract problems
exit 1, dataset problems exit 2, and OS-level I/O errors exit 3.
"""


class ShapeError(ValueError):
    """Tensor or matrix dimensions do not agree."""


class ParameterError(ValueError):
    """An operation was given an invalid parameter value."""


class ConfigError(ValueError):
    """Model or run configuration violates an invariant."""


class DataError(ValueError):
    """Dataset content is missing, malformed, or inconsistent."""


class ContractError(RuntimeError):
    """An API was used outside its documented contract."""


class CheckpointError(ConfigError):
    """Checkpoint file is malformed, the wrong version, or shape-inconsistent."""
