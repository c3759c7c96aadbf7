"""Data forging and meta-evaluation toolkit for subject-driven T2I metrics."""

from .core import (
    BBox,
    CategoryTag,
    DomainError,
    ImageRef,
    ImageStore,
    IntegrityError,
    ScorePair,
    SubjectInstance,
    crop,
    draw_bbox,
    harmonic_mean,
    masked_mse,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CategoryTag",
    "DomainError",
    "ImageRef",
    "ImageStore",
    "IntegrityError",
    "ScorePair",
    "SubjectInstance",
    "crop",
    "draw_bbox",
    "harmonic_mean",
    "masked_mse",
    "__version__",
]
