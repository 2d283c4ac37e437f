"""Collaborative BLE-RSS lateration: stand-alone and neighbor-assisted indoor positioning."""

from .errors import (
    DegenerateInputError,
    InsufficientAnchors,
    InsufficientNeighbors,
    ModelFormatError,
    ModelIntegrityError,
    NumericalFailure,
    ScenarioError,
    TrainingDataError,
)
from .geometry import Anchor, AnchorSet, DeviceProfile, Point2D, euclidean_distance, weighted_centroid
from .rss_model import LdplParams, ldpl_distance, ldpl_rss

__version__ = "0.1.0"

__all__ = [
    "Anchor",
    "AnchorSet",
    "DegenerateInputError",
    "DeviceProfile",
    "InsufficientAnchors",
    "InsufficientNeighbors",
    "LdplParams",
    "ModelFormatError",
    "ModelIntegrityError",
    "NumericalFailure",
    "Point2D",
    "ScenarioError",
    "TrainingDataError",
    "euclidean_distance",
    "ldpl_distance",
    "ldpl_rss",
    "weighted_centroid",
]
