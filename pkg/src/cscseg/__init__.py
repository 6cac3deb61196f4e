"""Segmentation with an unrolled convolutional sparse-coding decoder."""

__version__ = "0.1.0"

from .backend import active_backend
from .net import SegNet
from .training import TrainConfig, train
from .metrics import evaluate
from .data import generate

__all__ = [
    "SegNet",
    "TrainConfig",
    "train",
    "evaluate",
    "generate",
    "active_backend",
    "__version__",
]
