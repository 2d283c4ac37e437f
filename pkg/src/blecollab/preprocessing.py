"""Windowed RSS aggregation: grouping, interquartile filtering, averaging, anchor selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateInputError

DEFAULT_WINDOW_S = 60.0
DEFAULT_THRESHOLD_DBM = -83.0
LOG_HEADER = ("t", "rx", "tx", "rss")


@dataclass(frozen=True)
class RssSample:
    t: float
    rx: str
    tx: str
    rss: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.rss):
            raise ValueError(f"non-finite rss in sample {self}")


@dataclass(frozen=True)
class AggregatedRss:
    tx: str
    mean_rss: float
    sample_count: int


class MeasurementLog:
    """Columnar store of RSS samples.

    Ids are interned into integer codes so windowing stays vectorized on
    logs with hundreds of thousands of rows.
    """

    def __init__(self, t, rx_codes, tx_codes, rss, ids: Sequence[str]):
        self.t = np.asarray(t, dtype=float)
        self.rx_codes = np.asarray(rx_codes, dtype=np.int64)
        self.tx_codes = np.asarray(tx_codes, dtype=np.int64)
        self.rss = np.asarray(rss, dtype=float)
        self.ids = list(ids)
        self._code = {name: i for i, name in enumerate(self.ids)}
        n = self.t.shape[0]
        if not (self.rx_codes.shape[0] == self.tx_codes.shape[0] == self.rss.shape[0] == n):
            raise ValueError("column length mismatch")
        if n and not np.all(np.isfinite(self.rss)):
            raise ValueError("log contains non-finite rss values")
        self._ids_arr = np.array(self.ids, dtype=object)
        self._by_rx: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _rx_index(self, code: int) -> tuple[np.ndarray, np.ndarray]:
        # row indices of one receiver, ordered by time, built on first use
        if code not in self._by_rx:
            idx = np.flatnonzero(self.rx_codes == code)
            idx = idx[np.argsort(self.t[idx], kind="stable")]
            self._by_rx[code] = (idx, self.t[idx])
        return self._by_rx[code]

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @classmethod
    def from_samples(cls, samples: Iterable[RssSample]) -> MeasurementLog:
        samples = list(samples)
        ids: list[str] = []
        index: dict[str, int] = {}

        def code(name: str) -> int:
            if name not in index:
                index[name] = len(ids)
                ids.append(name)
            return index[name]

        rx = [code(s.rx) for s in samples]
        tx = [code(s.tx) for s in samples]
        return cls([s.t for s in samples], rx, tx, [s.rss for s in samples], ids)

    def samples(self) -> list[RssSample]:
        return [
            RssSample(float(t), self.ids[r], self.ids[x], float(v))
            for t, r, x, v in zip(self.t, self.rx_codes, self.tx_codes, self.rss)
        ]

    def receivers(self) -> list[str]:
        return [self.ids[c] for c in np.unique(self.rx_codes)]

    def t_span(self) -> tuple[float, float]:
        if len(self) == 0:
            return (0.0, 0.0)
        return float(self.t.min()), float(self.t.max())

    def window(self, rx: str, t_end: float, tw: float = DEFAULT_WINDOW_S) -> MeasurementWindow:
        """Samples received by ``rx`` with ``t_end - tw <= t < t_end``."""
        if rx not in self._code:
            return MeasurementWindow(rx, tw, t_end, np.zeros(0), np.array([], dtype=object), np.zeros(0))
        idx, t = self._rx_index(self._code[rx])
        lo, hi = np.searchsorted(t, [t_end - tw, t_end], side="left")
        rows = idx[lo:hi]
        return MeasurementWindow(rx, tw, t_end, self.t[rows], self._ids_arr[self.tx_codes[rows]], self.rss[rows])


class MeasurementWindow:
    """All samples one receiver collected during ``[t_end - tw, t_end)``."""

    def __init__(self, rx: str, tw: float, t_end: float, t, tx, rss):
        if not tw > 0:
            raise ValueError("window length must be > 0")
        self.rx = rx
        self.tw = float(tw)
        self.t_end = float(t_end)
        t = np.asarray(t, dtype=float)
        keep = (t >= self.t_end - self.tw) & (t < self.t_end)
        self.t = t[keep]
        self.tx = np.asarray(tx, dtype=object)[keep]
        self.rss = np.asarray(rss, dtype=float)[keep]

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @classmethod
    def from_samples(
        cls, rx: str, samples: Iterable[RssSample], tw: float = DEFAULT_WINDOW_S, t_end: float | None = None
    ) -> MeasurementWindow:
        """Build a window; samples for other receivers or outside the window are dropped."""
        own = [s for s in samples if s.rx == rx]
        if t_end is None:
            t_end = max((s.t for s in own), default=0.0) + 1e-9
        return cls(rx, tw, t_end, [s.t for s in own], [s.tx for s in own], [s.rss for s in own])

    def restricted_to(self, allowed: Iterable[str]) -> MeasurementWindow:
        """Copy without transmitters outside ``allowed``."""
        allowed = set(allowed)
        keep = np.array([tx in allowed for tx in self.tx], dtype=bool)
        return MeasurementWindow(self.rx, self.tw, self.t_end, self.t[keep], self.tx[keep], self.rss[keep])


def group_by_transmitter(window: MeasurementWindow) -> dict[str, list[float]]:
    """Values per transmitter in arrival order; keys in order of first appearance."""
    if len(window) == 0:
        return {}
    uniq, first, inv = np.unique(window.tx.astype(str), return_index=True, return_inverse=True)
    return {str(uniq[k]): window.rss[inv == k].tolist() for k in np.argsort(first)}


def iqr_filter(values: Sequence[float]) -> list[float]:
    """Keep values inside the inclusive [25th, 75th] percentile band.

    Percentiles use linear interpolation between closest ranks. Input order
    is preserved. A two-element list has no element inside its own band,
    so it is returned unchanged.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise DegenerateInputError("iqr_filter needs at least one value")
    q25, q75 = np.percentile(arr, [25.0, 75.0])
    kept = arr[(arr >= q25) & (arr <= q75)]
    if kept.size == 0:
        return [float(v) for v in arr]
    return [float(v) for v in kept]


def aggregate(groups: Mapping[str, Sequence[float]], filter_outliers: bool = True) -> list[AggregatedRss]:
    """One mean RSS per transmitter, optionally after :func:`iqr_filter`."""
    out = []
    for tx, values in groups.items():
        vals = iqr_filter(values) if filter_outliers else list(values)
        if not vals:
            raise DegenerateInputError(f"empty group for transmitter {tx}")
        out.append(AggregatedRss(tx, float(np.mean(vals)), len(vals)))
    return out


def select_strong(agg: Sequence[AggregatedRss], threshold: float = DEFAULT_THRESHOLD_DBM) -> list[AggregatedRss]:
    return [a for a in agg if a.mean_rss >= threshold]


def summarize_window(window: MeasurementWindow, allowed: Iterable[str] | None = None) -> list[AggregatedRss]:
    """Discard unknown transmitters, group, filter and average."""
    if allowed is not None:
        window = window.restricted_to(allowed)
    return aggregate(group_by_transmitter(window))


def write_log_csv(log: MeasurementLog | Iterable[RssSample], path: str | Path) -> int:
    """Write ``t,rx,tx,rss`` rows; returns the number of samples written."""
    if not isinstance(log, MeasurementLog):
        log = MeasurementLog.from_samples(log)
    ids = log.ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for t, r, x, v in zip(log.t, log.rx_codes, log.tx_codes, log.rss):
            w.writerow((repr(float(t)), ids[r], ids[x], repr(float(v))))
    return len(log)


def read_log_csv(path: str | Path) -> MeasurementLog:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LOG_HEADER)}, got {header}")
        ids: list[str] = []
        index: dict[str, int] = {}
        t, rx, tx, rss = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                t.append(float(row[0]))
                rss.append(float(row[3]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            for name, col in ((row[1], rx), (row[2], tx)):
                if name not in index:
                    index[name] = len(ids)
                    ids.append(name)
                col.append(index[name])
    return MeasurementLog(t, rx, tx, rss, ids)
