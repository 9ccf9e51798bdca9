"""Multi-modal brain network classification with staged mixture-of-experts fusion."""

from .config import RunConfig, apply_overrides, parse_config, parse_config_text
from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    FormatError,
    M3DError,
    NonFiniteError,
    PreprocessingError,
    ShapeError,
    StageError,
    TrainingDivergedError,
)

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "apply_overrides",
    "parse_config",
    "parse_config_text",
    "CheckpointError",
    "ConfigError",
    "DomainError",
    "FormatError",
    "M3DError",
    "NonFiniteError",
    "PreprocessingError",
    "ShapeError",
    "StageError",
    "TrainingDivergedError",
    "__version__",
]
