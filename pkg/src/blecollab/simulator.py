"""Deterministic BLE measurement-log generator.

Link model: log-distance path loss from the receiver's 1 m value, minus the
attenuation of every obstacle segment crossed by the TX-RX line, plus i.i.d.
Gaussian shadowing in dB. Randomness comes from numpy's PCG64 seeded with the
scenario seed, so logs are reproducible across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ScenarioError
from .geometry import Anchor, AnchorSet, DeviceProfile, Point2D
from .preprocessing import MeasurementLog
from .rss_model import DEFAULT_ETA, LdplParams, ldpl_rss

OFFICE_AREA = (16.7, 10.8)

OFFICE_ANCHORS = (
    ("B1", 0.0, 0.0),
    ("B2", 0.0, 10.68),
    ("B3", 3.78, 6.51),
    ("B4", 6.68, 10.64),
    ("B5", 9.2, 3.7),
    ("B6", 14.2, 6.05),
    ("B7", 16.65, 10.65),
)

# RSS at 1 m per receiving handset, dBm
OFFICE_DEVICE_RSS_1M = {
    "D1": -68.88,  # Galaxy S8
    "D2": -74.75,  # Lenovo Yoga Book
    "D3": -62.39,  # Galaxy A7 Duos
    "D4": -62.99,  # Galaxy S6
    "D5": -78.79,  # Galaxy A5
}

OFFICE_CONFIGS: dict[int, tuple[tuple[float, float], ...]] = {
    1: ((5.05, 3.7), (6.55, 4.55), (8.05, 0.7), (5.05, 0.7), (8.05, 3.7)),
    2: ((1.33, 6.1), (4.49, 3.05), (7.66, 0.1), (1.33, 0.1), (7.66, 6.1)),
    3: ((6.93, 1.3), (9.93, 1.3), (12.93, 1.3), (9.03, 0.1), (9.03, 3.7)),
    4: ((7.75, 6.1), (11.75, 2.75), (12.75, 0.1), (7.75, 0.1), (12.75, 6.1)),
    5: ((2.05, 9.7), (3.6, 3.3), (16.45, 2.5), (2.05, 2.5), (16.45, 9.7)),
    6: ((2.05, 9.7), (8.7, 6.4), (16.45, 2.5), (2.05, 2.5), (16.45, 9.7)),
    7: ((2.05, 9.7), (14.66, 6.45), (16.45, 2.5), (2.05, 2.5), (16.4, 9.7)),
}
TRAIN_CONFIGS = (2, 3, 6, 7)
TEST_CONFIGS = (1, 4, 5)

# Furniture-scale NLOS segments used by the end-to-end experiments.
OFFICE_OBSTACLES = (
    ((5.6, 4.8), (5.6, 9.2)),   # bookshelf
    ((9.6, 8.0), (13.6, 8.0)),  # desk row
    ((11.0, 2.0), (11.0, 5.0)),  # pillar and cabinet
    ((1.2, 1.6), (4.2, 1.6)),   # desk row
)


@dataclass(frozen=True)
class Obstacle:
    a: Point2D
    b: Point2D
    attenuation_db: float

    def __post_init__(self) -> None:
        if not self.attenuation_db >= 0:
            raise ValueError("obstacle attenuation must be >= 0 dB")


@dataclass(frozen=True)
class ChannelModel:
    """Path-loss exponents per link class and shadowing standard deviation (dB)."""

    eta_anchor: float = DEFAULT_ETA
    eta_device: float = DEFAULT_ETA
    shadowing_sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.shadowing_sigma >= 0:
            raise ValueError("shadowing_sigma must be >= 0")
        if not (self.eta_anchor > 0 and self.eta_device > 0):
            raise ValueError("path-loss exponents must be > 0")

    def link_params(self, rx: DeviceProfile, tx_is_anchor: bool) -> LdplParams:
        return LdplParams(rx.rss_at_1m, self.eta_anchor if tx_is_anchor else self.eta_device)


@dataclass(frozen=True)
class Scenario:
    """Static deployment: anchors, devices (with true positions and hardware 1 m RSS), obstacles."""

    area: tuple[float, float]
    anchors: AnchorSet
    devices: tuple[DeviceProfile, ...]
    obstacles: tuple[Obstacle, ...] = ()
    channel: ChannelModel = field(default_factory=ChannelModel)
    anchor_tx_period: float = 0.25
    device_tx_period: float = 0.1
    duration: float = 60.0
    seed: int = 0
    reference_anchor: str | None = None
    registration_samples: int = 100
    name: str = "scenario"

    def __post_init__(self) -> None:
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        w, h = self.area
        if not (w > 0 and h > 0):
            raise ScenarioError("area: width and height must be > 0")
        if not (self.anchor_tx_period > 0 and self.device_tx_period > 0):
            raise ScenarioError("tx periods must be > 0")
        if not self.duration > 0:
            raise ScenarioError("duration must be > 0")
        if self.registration_samples < 1:
            raise ScenarioError("registration.samples must be >= 1")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"devices: duplicate ids {ids}")
        if set(ids) & set(self.anchors.ids()):
            raise ScenarioError("devices: ids collide with anchor ids")
        for label, p in [(f"anchor {a.id}", a.position) for a in self.anchors] + [
            (f"device {d.id}", d.true_position) for d in self.devices
        ]:
            if p is None:
                raise ScenarioError(f"{label}: position required")
            if not (0 <= p.x <= w and 0 <= p.y <= h):
                raise ScenarioError(f"{label}: position ({p.x}, {p.y}) outside area {w} x {h}")
        pts = self.anchors.positions().tolist() + [[d.true_position.x, d.true_position.y] for d in self.devices]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if pts[i] == pts[j]:
                    raise ScenarioError(f"positions: two transmitters/receivers coincide at {pts[i]}")
        if self.reference_anchor is not None and self.reference_anchor not in self.anchors:
            raise ScenarioError(f"registration.reference_anchor: unknown anchor {self.reference_anchor!r}")

    def device(self, device_id: str) -> DeviceProfile:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def truth(self) -> dict[str, Point2D]:
        return {d.id: d.true_position for d in self.devices}

    def transmitter_ids(self) -> list[str]:
        return self.anchors.ids() + [d.id for d in self.devices]


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Closed-segment intersection test, vectorized over the leading axis of p1/p2."""
    p1, p2 = np.atleast_2d(p1), np.atleast_2d(p2)
    o1 = _orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q1[0], q1[1])
    o2 = _orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q2[0], q2[1])
    o3 = _orient(q1[0], q1[1], q2[0], q2[1], p1[:, 0], p1[:, 1])
    o4 = _orient(q1[0], q1[1], q2[0], q2[1], p2[:, 0], p2[:, 1])
    proper = (np.sign(o1) * np.sign(o2) < 0) & (np.sign(o3) * np.sign(o4) < 0)

    def on_seg(a, b, c, o):
        # c collinear with a-b and inside its bounding box
        return (o == 0) & (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0])) & (
            np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))

    q1b, q2b = np.broadcast_to(q1, p1.shape), np.broadcast_to(q2, p1.shape)
    touch = on_seg(p1, p2, q1b, o1) | on_seg(p1, p2, q2b, o2) | on_seg(q1b, q2b, p1, o3) | on_seg(q1b, q2b, p2, o4)
    return proper | touch


def obstacle_loss(a: Point2D, b: Point2D, obstacles: Sequence[Obstacle]) -> float:
    """Sum of attenuations of obstacles crossed by segment a-b."""
    p1, p2 = a.as_array(), b.as_array()
    return float(
        sum(o.attenuation_db for o in obstacles if segments_intersect(p1, p2, o.a.as_array(), o.b.as_array())[0])
    )


def _tx_times(offset: float, period: float, duration: float) -> np.ndarray:
    if offset >= duration:
        return np.zeros(0)
    n = int(math.floor((duration - offset) / period - 1e-9)) + 1
    return offset + period * np.arange(n)


def link_mean_rss(scenario: Scenario, tx_id: str, rx: DeviceProfile) -> float:
    """Noise-free RSS (dBm) of the tx -> rx link including obstacle losses."""
    is_anchor = tx_id in scenario.anchors
    tx_pos = scenario.anchors.get(tx_id).position if is_anchor else scenario.device(tx_id).true_position
    d = math.hypot(tx_pos.x - rx.true_position.x, tx_pos.y - rx.true_position.y)
    params = scenario.channel.link_params(rx, is_anchor)
    return ldpl_rss(params, d) - obstacle_loss(tx_pos, rx.true_position, scenario.obstacles)


def generate_log(scenario: Scenario, seed: int | None = None) -> MeasurementLog:
    """Every device receives every anchor and every other device at the transmitter's period.

    Each transmitter gets a seeded phase offset in [0, period); the stream is
    returned sorted by time.
    """
    rng = np.random.Generator(np.random.PCG64(scenario.seed if seed is None else seed))
    sigma = scenario.channel.shadowing_sigma
    ids = scenario.transmitter_ids()
    code = {name: i for i, name in enumerate(ids)}
    ts, rxs, txs, rsss = [], [], [], []
    for tx in ids:
        period = scenario.anchor_tx_period if tx in scenario.anchors else scenario.device_tx_period
        times = _tx_times(float(rng.uniform(0.0, period)), period, scenario.duration)
        for rx in scenario.devices:
            if rx.id == tx:
                continue
            mean = link_mean_rss(scenario, tx, rx)
            noise = rng.standard_normal(times.size) * sigma if sigma > 0 else np.zeros(times.size)
            ts.append(times)
            rxs.append(np.full(times.size, code[rx.id]))
            txs.append(np.full(times.size, code[tx]))
            rsss.append(mean + noise)
    if not ts:
        return MeasurementLog([], [], [], [], ids)
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    return MeasurementLog(t[order], np.concatenate(rxs)[order], np.concatenate(txs)[order], np.concatenate(rsss)[order], ids)


def register_device(
    scenario: Scenario,
    device: DeviceProfile | str,
    reference_anchor: str | None = None,
    n: int | None = None,
    seed: int | None = None,
) -> float:
    """Mean of ``n`` simulated readings taken 1 m from the reference anchor in line of sight."""
    dev = scenario.device(device) if isinstance(device, str) else device
    ref = reference_anchor or scenario.reference_anchor or scenario.anchors.ids()[0]
    if ref not in scenario.anchors:
        raise KeyError(f"unknown reference anchor {ref!r}")
    n = scenario.registration_samples if n is None else n
    if seed is None:
        idx = [d.id for d in scenario.devices].index(dev.id) if dev in scenario.devices else 0
        seed_seq = np.random.SeedSequence([scenario.seed, 1, idx])
    else:
        seed_seq = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    base = ldpl_rss(scenario.channel.link_params(dev, True), 1.0)
    sigma = scenario.channel.shadowing_sigma
    return float(np.mean(base + sigma * rng.standard_normal(n))) if sigma > 0 else float(base)


def registered_profiles(scenario: Scenario, reference_anchor: str | None = None, n: int | None = None) -> dict[str, DeviceProfile]:
    """Device profiles whose ``rss_at_1m`` is the registration measurement."""
    return {d.id: replace(d, rss_at_1m=register_device(scenario, d, reference_anchor, n)) for d in scenario.devices}


def office_scenario(
    config_id: int,
    shadowing_sigma: float = 0.0,
    obstacles: Sequence[Obstacle] = (),
    duration: float = 60.0,
    seed: int = 0,
) -> Scenario:
    """Seven-anchor office deployment with the five devices of configuration 1..7."""
    if config_id not in OFFICE_CONFIGS:
        raise ScenarioError(f"unknown configuration {config_id}; valid: 1..7")
    devices = tuple(
        DeviceProfile(dev_id, rss, Point2D(*OFFICE_CONFIGS[config_id][i]))
        for i, (dev_id, rss) in enumerate(OFFICE_DEVICE_RSS_1M.items())
    )
    return Scenario(
        area=OFFICE_AREA,
        anchors=AnchorSet.from_coords(OFFICE_ANCHORS),
        devices=devices,
        obstacles=tuple(obstacles),
        channel=ChannelModel(shadowing_sigma=shadowing_sigma),
        duration=duration,
        seed=seed,
        reference_anchor="B1",
        name=f"config{config_id}",
    )


def office_obstacles(attenuation_db: float = 6.0) -> tuple[Obstacle, ...]:
    return tuple(Obstacle(Point2D(*a), Point2D(*b), attenuation_db) for a, b in OFFICE_OBSTACLES)


# -- scenario documents -------------------------------------------------------


def _get(doc: dict, key: str, path: str, kind=float, default: Any = ...) -> Any:
    if key not in doc:
        if default is ...:
            raise ScenarioError(f"{path}{key}: missing required field")
        return default
    v = doc[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ScenarioError(f"{path}{key}: expected a finite number, got {v!r}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ScenarioError(f"{path}{key}: expected an integer, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str) or not v:
            raise ScenarioError(f"{path}{key}: expected a non-empty string, got {v!r}")
        return v
    if kind is list:
        if not isinstance(v, list):
            raise ScenarioError(f"{path}{key}: expected a list")
        return v
    if kind is dict:
        if not isinstance(v, dict):
            raise ScenarioError(f"{path}{key}: expected an object")
        return v
    raise TypeError(kind)


def scenario_from_dict(doc: dict) -> Scenario:
    """Parse a scenario document; errors name the offending field path."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: expected a JSON object")
    area = _get(doc, "area", "", dict)
    width, height = _get(area, "width", "area."), _get(area, "height", "area.")
    anchors = []
    for i, a in enumerate(_get(doc, "anchors", "", list)):
        p = f"anchors[{i}]."
        if not isinstance(a, dict):
            raise ScenarioError(f"anchors[{i}]: expected an object")
        anchors.append(Anchor(_get(a, "id", p, str), Point2D(_get(a, "x", p), _get(a, "y", p))))
    devices = []
    for i, d in enumerate(_get(doc, "devices", "", list)):
        p = f"devices[{i}]."
        if not isinstance(d, dict):
            raise ScenarioError(f"devices[{i}]: expected an object")
        devices.append(DeviceProfile(_get(d, "id", p, str), _get(d, "rss_at_1m", p), Point2D(_get(d, "x", p), _get(d, "y", p))))
    obstacles = []
    for i, o in enumerate(_get(doc, "obstacles", "", list, [])):
        p = f"obstacles[{i}]."
        if not isinstance(o, dict):
            raise ScenarioError(f"obstacles[{i}]: expected an object")
        att = _get(o, "attenuation_db", p)
        if att < 0:
            raise ScenarioError(f"{p}attenuation_db: must be >= 0")
        obstacles.append(Obstacle(Point2D(_get(o, "x1", p), _get(o, "y1", p)), Point2D(_get(o, "x2", p), _get(o, "y2", p)), att))
    ch = _get(doc, "channel", "", dict, {})
    sigma = _get(ch, "shadowing_sigma", "channel.", float, 0.0)
    if sigma < 0:
        raise ScenarioError("channel.shadowing_sigma: must be >= 0")
    eta_a = _get(ch, "eta", "channel.", float, DEFAULT_ETA)
    eta_d = _get(ch, "device_eta", "channel.", float, eta_a)
    if eta_a <= 0 or eta_d <= 0:
        raise ScenarioError("channel.eta: must be > 0")
    reg = _get(doc, "registration", "", dict, {})
    try:
        anchor_set = AnchorSet(tuple(anchors))
    except ValueError as exc:
        raise ScenarioError(f"anchors: {exc}") from None
    for key in ("anchor_tx_period", "device_tx_period", "duration"):
        if key in doc and _get(doc, key, "") <= 0:
            raise ScenarioError(f"{key}: must be > 0")
    return Scenario(
        area=(width, height),
        anchors=anchor_set,
        devices=tuple(devices),
        obstacles=tuple(obstacles),
        channel=ChannelModel(eta_a, eta_d, sigma),
        anchor_tx_period=_get(doc, "anchor_tx_period", "", float, 0.25),
        device_tx_period=_get(doc, "device_tx_period", "", float, 0.1),
        duration=_get(doc, "duration", "", float, 60.0),
        seed=_get(doc, "seed", "", int, 0),
        reference_anchor=_get(reg, "reference_anchor", "registration.", str, None),
        registration_samples=_get(reg, "samples", "registration.", int, 100),
        name=_get(doc, "name", "", str, "scenario"),
    )


def scenario_to_dict(s: Scenario) -> dict:
    doc: dict[str, Any] = {
        "name": s.name,
        "area": {"width": s.area[0], "height": s.area[1]},
        "anchors": [{"id": a.id, "x": a.position.x, "y": a.position.y} for a in s.anchors],
        "devices": [
            {"id": d.id, "x": d.true_position.x, "y": d.true_position.y, "rss_at_1m": d.rss_at_1m} for d in s.devices
        ],
        "obstacles": [
            {"x1": o.a.x, "y1": o.a.y, "x2": o.b.x, "y2": o.b.y, "attenuation_db": o.attenuation_db}
            for o in s.obstacles
        ],
        "channel": {
            "eta": s.channel.eta_anchor,
            "device_eta": s.channel.eta_device,
            "shadowing_sigma": s.channel.shadowing_sigma,
        },
        "anchor_tx_period": s.anchor_tx_period,
        "device_tx_period": s.device_tx_period,
        "duration": s.duration,
        "seed": s.seed,
        "registration": {"samples": s.registration_samples},
    }
    if s.reference_anchor is not None:
        doc["registration"]["reference_anchor"] = s.reference_anchor
    return doc


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n", encoding="utf-8")
