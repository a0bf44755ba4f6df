"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(FloatingPointError):
    """An operation would produce NaN or Inf; raised instead of propagating."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (e.g. a near-zero row fed to a normalizer)."""


class TraceError(RuntimeError):
    """Misuse of the single-use autodiff trace (backward twice, non-scalar root, ...)."""


class OptimizerError(RuntimeError):
    """Optimizer contract violation, e.g. a trainable parameter without a gradient."""


class ConfigError(ValueError):
    """Invalid run configuration or parameter-name pattern."""


class GenerationError(RuntimeError):
    """Synthetic-world construction failed (rejection loop, teacher alignment check)."""


class CheckpointError(RuntimeError):
    """Checkpoint container is malformed, truncated, or version-incompatible."""


class TrainingError(RuntimeError):
    """A training run aborted (divergence, missing inputs)."""
