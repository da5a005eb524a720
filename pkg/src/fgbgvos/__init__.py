"""Video object segmentation by foreground/background pixel matching.

Given the first-frame object masks, the model propagates segmentation
through a video: per-pixel embeddings are matched globally against the
first frame and locally (multiple window sizes) against the previous
frame, for both the object and its relative background; pooled
instance embeddings gate a dilated prediction head that fuses
everything into per-object masks.
"""

from . import attention, data, embedding, ensembler, inference, matching, metrics, training
from .errors import DataError, InvalidConfigError, InvalidInputError, NumericError
from .model import ModelConfig, SegModel, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "InvalidConfigError",
    "InvalidInputError",
    "ModelConfig",
    "NumericError",
    "SegModel",
    "attention",
    "data",
    "embedding",
    "ensembler",
    "inference",
    "load_checkpoint",
    "matching",
    "metrics",
    "save_checkpoint",
    "training",
]
