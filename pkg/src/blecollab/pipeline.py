"""Stand-alone lateration, neighbor-assisted lateration, and midpoint fusion."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import InsufficientAnchors, InsufficientNeighbors, NumericalFailure
from .geometry import Anchor, AnchorSet, DeviceProfile, Point2D
from .lateration import (
    PositionEstimate,
    Phase,
    RangingObservation,
    SolverConfig,
    default_weights,
    laterate,
)
from .preprocessing import (
    DEFAULT_THRESHOLD_DBM,
    DEFAULT_WINDOW_S,
    MeasurementWindow,
    select_strong,
    summarize_window,
)
from .rss_model import DEFAULT_ETA, LdplParams, ldpl_distance


class DistanceModel(Protocol):
    """Anything mapping an (n, 6) feature array to n distances in meters."""

    def predict(self, features: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class PipelineConfig:
    tw: float = DEFAULT_WINDOW_S
    threshold: float = DEFAULT_THRESHOLD_DBM
    eta: float = DEFAULT_ETA
    solver: SolverConfig = field(default_factory=SolverConfig)
    min_neighbors: int = 3
    # "lat1": start the collaborative solve at the target's own stand-alone
    # estimate; "centroid": weighted centroid of the neighbors
    lat2_initial_guess: str = "lat1"

    def __post_init__(self) -> None:
        if not self.tw > 0:
            raise ValueError("tw must be > 0")
        if self.lat2_initial_guess not in ("lat1", "centroid"):
            raise ValueError("lat2_initial_guess must be 'lat1' or 'centroid'")
        if self.min_neighbors < 3:
            raise ValueError("min_neighbors must be >= 3 for lateration")


@dataclass(frozen=True)
class SharedEntry:
    estimate: PositionEstimate
    rss_at_1m: float
    timestamp: float


class SharedState:
    """Registry of published stand-alone estimates, one entry per device.

    Writers publish under a lock; readers work on immutable snapshots, so an
    estimate published during an evaluation never leaks into it.
    """

    def __init__(self) -> None:
        self._entries: dict[str, SharedEntry] = {}
        self._lock = threading.Lock()

    def publish(self, device_id: str, estimate: PositionEstimate, rss_at_1m: float, timestamp: float) -> None:
        with self._lock:
            self._entries[device_id] = SharedEntry(estimate, rss_at_1m, timestamp)

    def snapshot(self) -> Mapping[str, SharedEntry]:
        with self._lock:
            return MappingProxyType(dict(self._entries))

    def __len__(self) -> int:
        return len(self._entries)


def standalone_position(
    window: MeasurementWindow,
    anchors: AnchorSet,
    profile: DeviceProfile,
    cfg: PipelineConfig | None = None,
    shared: SharedState | None = None,
) -> PositionEstimate:
    """Lat1: filter/average anchor RSS, keep strong anchors, range with LDPL, laterate.

    On success the estimate is published to ``shared`` (if given) stamped
    with the window end time.
    """
    cfg = cfg or PipelineConfig()
    if window.rx != profile.id:
        raise ValueError(f"window belongs to {window.rx!r}, not {profile.id!r}")
    strong = select_strong(summarize_window(window, anchors.ids()), cfg.threshold)
    if len(strong) < 3:
        raise InsufficientAnchors(f"{profile.id}: {len(strong)} anchors above {cfg.threshold} dBm")
    ldpl = LdplParams(profile.rss_at_1m, cfg.eta)
    obs = [RangingObservation(anchors.get(a.tx), ldpl_distance(ldpl, a.mean_rss)) for a in strong]
    est = laterate(default_weights(obs), cfg.solver, Phase.LAT1)
    if shared is not None:
        shared.publish(profile.id, est, profile.rss_at_1m, window.t_end)
    return est


def feature_rows(
    rss_by_tx: Mapping[str, float],
    neighbor_positions: Mapping[str, Point2D],
    rx_position: Point2D,
    rx_rss_at_1m: float,
) -> tuple[list[str], np.ndarray]:
    """Six-feature rows, one per transmitter present in both mappings, sorted by id."""
    ids = sorted(tx for tx in rss_by_tx if tx in neighbor_positions)
    rows = np.array(
        [
            [rss_by_tx[tx], neighbor_positions[tx].x, neighbor_positions[tx].y, rx_position.x, rx_position.y, rx_rss_at_1m]
            for tx in ids
        ],
        dtype=float,
    ).reshape(-1, 6)
    return ids, rows


def _fresh_neighbors(shared: Mapping[str, SharedEntry], target: str, now: float, tw: float) -> dict[str, Point2D]:
    return {
        dev: e.estimate.position
        for dev, e in shared.items()
        if dev != target and e.timestamp >= now - tw and e.timestamp <= now
    }


def collaborative_position(
    window: MeasurementWindow,
    shared: SharedState | Mapping[str, SharedEntry],
    model: DistanceModel | Callable[[np.ndarray], np.ndarray],
    target: DeviceProfile,
    cfg: PipelineConfig | None = None,
    now: float | None = None,
) -> PositionEstimate:
    """Lat2: neighbors' Lat1 estimates serve as anchors, ranged by the distance model.

    ``window`` holds device-to-device samples received by ``target``.
    Neighbors whose shared entry is older than ``tw`` relative to ``now``
    (default: the window end) are ignored, as are neighbors whose predicted
    distance is not positive.
    """
    cfg = cfg or PipelineConfig()
    snap = shared.snapshot() if isinstance(shared, SharedState) else shared
    now = window.t_end if now is None else now
    if target.id not in snap:
        raise InsufficientNeighbors(f"{target.id}: no stand-alone estimate to collaborate from")
    rx_pos = snap[target.id].estimate.position
    neighbors = _fresh_neighbors(snap, target.id, now, cfg.tw)
    agg = summarize_window(window, neighbors.keys())
    ids, X = feature_rows({a.tx: a.mean_rss for a in agg}, neighbors, rx_pos, target.rss_at_1m)
    if len(ids) < cfg.min_neighbors:
        raise InsufficientNeighbors(f"{target.id}: {len(ids)} neighbors, need {cfg.min_neighbors}")
    predict = model.predict if hasattr(model, "predict") else model
    dist = np.asarray(predict(X), dtype=float).ravel()
    if not np.all(np.isfinite(dist)):
        raise NumericalFailure("distance model produced non-finite output")
    obs = [RangingObservation(Anchor(tx, neighbors[tx]), float(d)) for tx, d in zip(ids, dist) if d > 0]
    if len(obs) < cfg.min_neighbors:
        raise InsufficientNeighbors(f"{target.id}: {len(obs)} neighbors with positive predicted distance")
    init = rx_pos if cfg.lat2_initial_guess == "lat1" else None
    return laterate(default_weights(obs), cfg.solver, Phase.LAT2, initial=init)


def fuse_midpoint(lat1: PositionEstimate, lat2: PositionEstimate) -> PositionEstimate:
    p, q = lat1.position, lat2.position
    return PositionEstimate(
        position=Point2D((p.x + q.x) / 2.0, (p.y + q.y) / 2.0),
        phase=Phase.FUSED,
        residual_rms=(lat1.residual_rms + lat2.residual_rms) / 2.0,
        iterations=lat1.iterations + lat2.iterations,
        converged=lat1.converged and lat2.converged,
    )


def position_device(
    anchor_window: MeasurementWindow,
    peer_window: MeasurementWindow | None,
    anchors: AnchorSet,
    profile: DeviceProfile,
    shared: SharedState,
    model: DistanceModel | None,
    cfg: PipelineConfig | None = None,
) -> PositionEstimate:
    """Lat1, then fused with Lat2 when collaboration succeeds; otherwise Lat1 alone."""
    cfg = cfg or PipelineConfig()
    lat1 = standalone_position(anchor_window, anchors, profile, cfg, shared)
    if model is None or peer_window is None:
        return lat1
    try:
        lat2 = collaborative_position(peer_window, shared, model, profile, cfg)
    except (InsufficientNeighbors, InsufficientAnchors, NumericalFailure):
        return lat1
    return fuse_midpoint(lat1, lat2)


@dataclass
class DeviceRound:
    lat1: PositionEstimate | None = None
    lat2: PositionEstimate | None = None
    fused: PositionEstimate | None = None
    error: str | None = None


def run_round(
    windows: Mapping[str, MeasurementWindow],
    anchors: AnchorSet,
    profiles: Mapping[str, DeviceProfile],
    model: DistanceModel | None,
    cfg: PipelineConfig | None = None,
    shared: SharedState | None = None,
) -> dict[str, DeviceRound]:
    """One evaluation window for every device.

    All Lat1 estimates are published first, then every device collaborates
    against the same frozen snapshot. ``windows`` maps device id to the full
    window it received (anchors and peers mixed).
    """
    cfg = cfg or PipelineConfig()
    shared = shared if shared is not None else SharedState()
    out: dict[str, DeviceRound] = {}
    for dev_id in sorted(windows):
        res = out.setdefault(dev_id, DeviceRound())
        if dev_id not in profiles:
            res.error = "missing registration value"
            continue
        try:
            res.lat1 = standalone_position(windows[dev_id], anchors, profiles[dev_id], cfg, shared)
        except (InsufficientAnchors, NumericalFailure) as exc:
            res.error = str(exc)
    snap = shared.snapshot()
    for dev_id, res in out.items():
        if res.lat1 is None:
            continue
        res.fused = res.lat1
        if model is None:
            continue
        peers = windows[dev_id].restricted_to(set(profiles) - {dev_id})
        try:
            res.lat2 = collaborative_position(peers, snap, model, profiles[dev_id], cfg)
        except (InsufficientNeighbors, InsufficientAnchors, NumericalFailure):
            continue
        res.fused = fuse_midpoint(res.lat1, res.lat2)
    return out
