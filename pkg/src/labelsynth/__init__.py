"""labelsynth: instance and semantic pseudo-label synthesis from class
attention maps via inter-pixel displacement and boundary fields."""

__version__ = "0.1.0"

from .core import (
    BACKGROUND,
    NEUTRAL,
    BoundaryMap,
    DisplacementField,
    GridShape,
    LabelImage,
    PipelineConfig,
    RawScoreStack,
    ScoreStack,
)

__all__ = [
    "BACKGROUND",
    "NEUTRAL",
    "BoundaryMap",
    "DisplacementField",
    "GridShape",
    "LabelImage",
    "PipelineConfig",
    "RawScoreStack",
    "ScoreStack",
    "__version__",
]
