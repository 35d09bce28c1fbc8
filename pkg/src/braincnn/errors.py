"""Exception types shared across the package."""


class BrainCnnError(Exception):
    pass


class ShapeError(BrainCnnError):
    """Tensor shapes incompatible with the requested operation."""


class NumericalError(BrainCnnError):
    """Non-finite values produced or consumed where finiteness is required."""


class DataError(BrainCnnError):
    """Dataset scanning, decoding, or splitting failed."""


class ConfigError(BrainCnnError):
    """Malformed or unknown configuration input."""


class ClassMismatchError(BrainCnnError):
    """Checkpoint and dataset disagree on the class set."""


class CheckpointError(BrainCnnError):
    """Base for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """File does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """File uses an unsupported format version."""


class CheckpointCorruptError(CheckpointError):
    """Truncated payload or inconsistent shape table."""


class TrainingDiverged(BrainCnnError):
    """Loss became non-finite during training."""
