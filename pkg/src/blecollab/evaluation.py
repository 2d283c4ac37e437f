"""Positioning-error metrics, relative differences, and ECDF curves."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError

METRIC_NAMES = ("rmse", "mean", "median", "p75", "p90")
METRIC_LABELS = {
    "rmse": "RMSE",
    "mean": "Mean",
    "median": "Median",
    "p70": "70th percentile",
    "p75": "75th percentile",
    "p90": "90th percentile",
}
METRICS_HEADER = ("phase", "count", *METRIC_NAMES)


@dataclass(frozen=True)
class ErrorSample:
    device: str
    window: int
    phase: str
    error: float
    config: str = ""

    def __post_init__(self) -> None:
        if not self.error >= 0:
            raise ValueError("positioning error must be >= 0")


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mean: float
    median: float
    p75: float
    p90: float
    count: int
    p70: float | None = None

    def values(self, include_p70: bool = False) -> dict[str, float | None]:
        out = {name: getattr(self, name) for name in METRIC_NAMES}
        if include_p70:
            out = {"rmse": self.rmse, "mean": self.mean, "median": self.median, "p70": self.p70,
                   "p75": self.p75, "p90": self.p90}
        return out


def compute_metrics(errors: Sequence[float], include_p70: bool = False) -> MetricsReport:
    """RMSE, mean and percentiles (linear interpolation, same rule as the outlier filter)."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise DegenerateInputError("no errors to summarize")
    p50, p70, p75, p90 = np.percentile(e, [50.0, 70.0, 75.0, 90.0])
    return MetricsReport(
        rmse=math.sqrt(float(np.mean(e * e))),
        mean=float(np.mean(e)),
        median=float(p50),
        p75=float(p75),
        p90=float(p90),
        count=int(e.size),
        p70=float(p70) if include_p70 else None,
    )


def relative_difference(baseline: MetricsReport, proposed: MetricsReport) -> dict[str, float | None]:
    """Signed improvement in percent per metric: 100 * (baseline - proposed) / baseline.

    A zero baseline metric yields None for that metric.
    """
    out: dict[str, float | None] = {}
    names = METRIC_NAMES + (("p70",) if baseline.p70 is not None and proposed.p70 is not None else ())
    for name in names:
        b, p = getattr(baseline, name), getattr(proposed, name)
        out[name] = None if b == 0 else 100.0 * (b - p) / b
    return out


def ecdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    """(error, P[E <= error]) at each distinct error, ascending."""
    e = np.sort(np.asarray(errors, dtype=float))
    if e.size == 0:
        raise DegenerateInputError("no errors for ECDF")
    values, counts = np.unique(e, return_counts=True)
    cum = np.cumsum(counts)
    probs = cum / e.size
    probs[-1] = 1.0
    return [(float(v), float(p)) for v, p in zip(values, probs)]


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def metrics_csv(reports: dict[str, MetricsReport], include_p70: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(METRICS_HEADER) + (["p70"] if include_p70 else [])
    w.writerow(header)
    for phase, r in reports.items():
        row = [phase, r.count] + [_fmt(getattr(r, m)) for m in METRIC_NAMES]
        if include_p70:
            row.append(_fmt(r.p70))
        w.writerow(row)
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> dict[str, MetricsReport]:
    """Parse a metrics CSV; raises ValueError naming any missing column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in METRICS_HEADER if c not in fields]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                p70 = row.get("p70")
                out[row["phase"]] = MetricsReport(
                    rmse=float(row["rmse"]),
                    mean=float(row["mean"]),
                    median=float(row["median"]),
                    p75=float(row["p75"]),
                    p90=float(row["p90"]),
                    count=int(row["count"]),
                    p70=float(p70) if p70 not in (None, "") else None,
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise ValueError(f"{path}: no metric rows")
    return out


def ecdf_csv(curves: dict[str, Sequence[tuple[float, float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("phase", "error_m", "probability"))
    for phase, pts in curves.items():
        for e, p in pts:
            w.writerow((phase, repr(e), repr(p)))
    return buf.getvalue()


def errors_csv(samples: Iterable[ErrorSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("config", "device", "window", "phase", "error_m"))
    for s in samples:
        w.writerow((s.config, s.device, s.window, s.phase, repr(s.error)))
    return buf.getvalue()


def comparison_table(
    baseline: MetricsReport,
    proposed: MetricsReport,
    baseline_label: str = "Baseline",
    proposed_label: str = "Proposed",
) -> str:
    """Aligned text table: metric, both errors (m), and the signed difference."""
    diffs = relative_difference(baseline, proposed)
    rows = [("Eval. metric", f"{baseline_label} (m)", f"{proposed_label} (m)", "Diff.")]
    for name, d in diffs.items():
        if d is None:
            dtxt = "n/a"
        elif d > 0:
            dtxt = f"down {d:.2f}%"
        elif d < 0:
            dtxt = f"up {-d:.2f}%"
        else:
            dtxt = "0.00%"
        rows.append((METRIC_LABELS[name], f"{getattr(baseline, name):.2f}", f"{getattr(proposed, name):.2f}", dtxt))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def metrics_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table of one or more phase reports."""
    rows = [("phase", "count", *METRIC_NAMES)]
    for phase, r in reports.items():
        rows.append((phase, str(r.count), *(f"{getattr(r, m):.3f}" for m in METRIC_NAMES)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(widths[i]) for i, c in enumerate(r)) for r in rows) + "\n"
