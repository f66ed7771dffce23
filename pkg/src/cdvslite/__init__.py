"""Compact visual descriptor encoder with a deterministic tile engine and retrieval evaluation."""

from .bundle import ModelBundle
from .evaluation import compute_map, compute_roc, match_pair, retrieve
from .imaging import GrayImage, load_image, resize_max_side
from .pipeline import EncodedImage, encode_image, train_bundle
from .scalespace import ScaleSpaceConfig, detect

__version__ = "0.1.0"

__all__ = [
    "EncodedImage",
    "GrayImage",
    "ModelBundle",
    "ScaleSpaceConfig",
    "compute_map",
    "compute_roc",
    "detect",
    "encode_image",
    "load_image",
    "match_pair",
    "resize_max_side",
    "retrieve",
    "train_bundle",
]
