"""Aspect-specific context modeling toolkit for aspect-based sentiment analysis."""

from .corpus import DatasetStats, RawInstance
from .encoder import ASP_END, ASP_START, TinyEncoder, TinyTokenizer, tiny_encoder
from .model import AbsaModel, HeadConfig
from .trainer import RunConfig
from .transform import TagSequence, TransformedInput

__version__ = "0.1.0"

__all__ = [
    "ASP_END",
    "ASP_START",
    "AbsaModel",
    "DatasetStats",
    "HeadConfig",
    "RawInstance",
    "RunConfig",
    "TagSequence",
    "TinyEncoder",
    "TinyTokenizer",
    "TransformedInput",
    "__version__",
    "tiny_encoder",
]
