"""Exception hierarchy shared across the package."""


class M3DError(Exception):
    """Base class for every error raised deliberately by this package."""


class ShapeError(M3DError, ValueError):
    pass


class NonFiniteError(M3DError, FloatingPointError):
    """A primitive produced NaN or Inf from finite inputs."""


class DomainError(M3DError, ValueError):
    """Input outside the mathematical domain of an op (log of <= 0, zero-norm row)."""


class PreprocessingError(M3DError, ValueError):
    pass


class FormatError(M3DError, ValueError):
    """Malformed on-disk dataset, matrix, config or checkpoint."""


class ConfigError(FormatError):
    pass


class CheckpointError(FormatError):
    pass


class StageError(M3DError, RuntimeError):
    """Wrong or missing training stage artifact."""


class TrainingDivergedError(M3DError, RuntimeError):
    def __init__(self, stage, epoch, detail=""):
        self.stage = stage
        self.epoch = epoch
        msg = f"stage {stage} diverged at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
