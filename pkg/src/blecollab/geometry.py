"""Planar points, anchors and device profiles."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DegenerateInputError


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> Point2D:
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True)
class Anchor:
    id: str
    position: Point2D


@dataclass(frozen=True)
class AnchorSet:
    """Ordered, id-unique collection of anchors."""

    anchors: tuple[Anchor, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(self.anchors))
        ids = [a.id for a in self.anchors]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate anchor ids in {ids}")

    def __len__(self) -> int:
        return len(self.anchors)

    def __iter__(self) -> Iterator[Anchor]:
        return iter(self.anchors)

    def __contains__(self, anchor_id: object) -> bool:
        return any(a.id == anchor_id for a in self.anchors)

    def ids(self) -> list[str]:
        return [a.id for a in self.anchors]

    def get(self, anchor_id: str) -> Anchor:
        for a in self.anchors:
            if a.id == anchor_id:
                return a
        raise KeyError(anchor_id)

    def positions(self) -> np.ndarray:
        """(M, 2) array of anchor coordinates."""
        if not self.anchors:
            return np.zeros((0, 2))
        return np.array([[a.position.x, a.position.y] for a in self.anchors], dtype=float)

    @classmethod
    def from_coords(cls, coords: Iterable[tuple[str, float, float]]) -> AnchorSet:
        return cls(tuple(Anchor(i, Point2D(float(x), float(y))) for i, x, y in coords))


@dataclass(frozen=True)
class DeviceProfile:
    """A receiving device and its 1 m calibration value (dBm).

    ``true_position`` is only known in simulation.
    """

    id: str
    rss_at_1m: float
    true_position: Point2D | None = field(default=None)

    def __post_init__(self) -> None:
        if not math.isfinite(self.rss_at_1m):
            raise ValueError(f"device {self.id}: rss_at_1m must be finite")
        if not -100.0 <= self.rss_at_1m <= -30.0:
            warnings.warn(
                f"device {self.id}: rss_at_1m={self.rss_at_1m} dBm outside typical -100..-30 range",
                stacklevel=2,
            )


def euclidean_distance(a: Point2D, b: Point2D) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def weighted_centroid(anchors: AnchorSet | np.ndarray, weights: Sequence[float] | np.ndarray) -> Point2D:
    """Weighted mean of anchor positions.

    ``anchors`` may be an AnchorSet or an (M, 2) coordinate array.
    """
    pos = anchors.positions() if isinstance(anchors, AnchorSet) else np.asarray(anchors, dtype=float)
    w = np.asarray(weights, dtype=float)
    if pos.shape[0] != w.shape[0]:
        raise ValueError(f"{pos.shape[0]} anchors but {w.shape[0]} weights")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise DegenerateInputError("weighted centroid needs at least one positive weight")
    return Point2D.from_array((w[:, None] * pos).sum(axis=0) / total)
