"""Whole-slide-image preprocessing, patch scoring and evaluation pipeline
for colorectal polyp dysplasia grading."""

__version__ = "0.1.0"

from .aggregate import GroupedClass4, SlideVerdict
from .annotations import (
    Contour,
    DatasetSummary,
    RoIAnnotation,
    SlideAnnotationSet,
    SlideMetadata,
    TissueClass6,
)
from .classify import ClassScores, FocalLossConfig
from .raster import ImageBuffer
from .resampler import PatchSpec
from .stainnorm import MacenkoParams, StainProfile
from .tiler import Patch, TissueFilterParams

__all__ = [
    "ClassScores",
    "Contour",
    "DatasetSummary",
    "FocalLossConfig",
    "GroupedClass4",
    "ImageBuffer",
    "MacenkoParams",
    "Patch",
    "PatchSpec",
    "RoIAnnotation",
    "SlideAnnotationSet",
    "SlideMetadata",
    "SlideVerdict",
    "StainProfile",
    "TissueClass6",
    "TissueFilterParams",
    "__version__",
]
