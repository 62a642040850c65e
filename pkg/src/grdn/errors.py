"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible (message names the offending shapes)."""


class GraphError(RuntimeError):
    """Autodiff graph misuse: non-scalar loss, missing gradient, missing linkage."""


class NonFiniteError(ArithmeticError):
    """A numeric check produced NaN or Inf."""


class ConfigError(ValueError):
    """Invalid model/training configuration."""


class DataError(ValueError):
    """Dataset problem: image too small, empty source, bad mix weights."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or does not match the current config."""


class TrainingDiverged(RuntimeError):
    """Training aborted on a non-finite loss; message carries diagnostics."""
