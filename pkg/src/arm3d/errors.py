"""Exception types shared across the package."""


class Arm3dError(Exception):
    """Base class for all package errors."""


class ShapeError(Arm3dError, ValueError):
    """Matrix/layer width mismatch."""


class DegenerateBatchError(Arm3dError, ValueError):
    """Batch normalization asked to normalize a single-row batch in train mode."""


class UsageError(Arm3dError, ValueError):
    """Caller violated an API or CLI contract (bad flag combination, empty tape, ...)."""


class TrainingDivergenceError(Arm3dError, RuntimeError):
    """Non-finite loss or gradient encountered during training."""


class GenerationError(Arm3dError, RuntimeError):
    """Synthetic scene placement failed after bounded retries."""


class CheckpointError(Arm3dError, RuntimeError):
    """Checkpoint file is malformed or incompatible with the requested model."""
