"""Summary statistics and report export (stats JSON, box-plot CSV)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import EmptySample
from .legs import LegDelayRecord

FORMATS = ("stats-json", "boxplot-csv")


@dataclass(frozen=True)
class SummaryStats:
    """Five-number summary of a delay sample, all in milliseconds.

    ``std`` is the sample standard deviation (n - 1 divisor; 0 for n = 1).
    """

    count: int
    min: float
    max: float
    mean: float
    median: float
    std: float

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not (self.min <= self.median <= self.max):
            raise ValueError("expected min <= median <= max")


def summarize_stats(samples: Sequence[float]) -> SummaryStats:
    """Exact min/max/mean, sorted-middle median, sample (n-1) std."""
    if len(samples) == 0:
        raise EmptySample("cannot summarize an empty sample")
    arr = np.asarray(samples, dtype=np.float64)
    return SummaryStats(
        count=int(arr.size),
        min=float(arr.min()),
        max=float(arr.max()),
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        std=float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
    )


def group_delays(records: Iterable[LegDelayRecord]) -> dict[tuple[str, str], list[float]]:
    """Pool delay samples by (csp, leg name), preserving arrival order."""
    groups: dict[tuple[str, str], list[float]] = {}
    for record in records:
        for leg, value in record.delays.items():
            groups.setdefault((record.csp, leg), []).append(value)
    return groups


def _quartiles(arr: np.ndarray) -> tuple[float, float, float]:
    q1, q2, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return float(q1), float(q2), float(q3)


def _fmt(value: float) -> str:
    return f"{value:.3f}"


def export_stats_json(records: Sequence[LegDelayRecord]) -> bytes:
    """One summary object per (csp, leg) group, sorted for determinism."""
    groups = group_delays(records)
    if not groups:
        raise EmptySample("no delay samples to summarize")
    out = []
    for (csp, leg) in sorted(groups):
        stats = summarize_stats(groups[(csp, leg)])
        out.append(
            {
                "group": {"csp": csp, "leg": leg},
                "count": stats.count,
                "min": stats.min,
                "max": stats.max,
                "mean": stats.mean,
                "median": stats.median,
                "std": stats.std,
            }
        )
    return (json.dumps(out, indent=2) + "\n").encode("utf-8")


def export_boxplot_csv(records: Sequence[LegDelayRecord]) -> bytes:
    """Tukey box-plot rows per (csp, leg): quartiles, 1.5*IQR whiskers, outliers.

    Whiskers sit on the most extreme samples still inside the 1.5*IQR fences;
    outliers beyond them are listed semicolon-joined.
    """
    groups = group_delays(records)
    if not groups:
        raise EmptySample("no delay samples to plot")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["csp", "leg", "q1", "median", "q3", "lo_whisker", "hi_whisker", "outliers"]
    )
    for (csp, leg) in sorted(groups):
        arr = np.asarray(groups[(csp, leg)], dtype=np.float64)
        q1, q2, q3 = _quartiles(arr)
        iqr = q3 - q1
        lo_fence = q1 - 1.5 * iqr
        hi_fence = q3 + 1.5 * iqr
        inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
        lo_whisker = float(inside.min())
        hi_whisker = float(inside.max())
        outliers = sorted(float(v) for v in arr[(arr < lo_fence) | (arr > hi_fence)])
        writer.writerow(
            [
                csp,
                leg,
                _fmt(q1),
                _fmt(q2),
                _fmt(q3),
                _fmt(lo_whisker),
                _fmt(hi_whisker),
                ";".join(_fmt(v) for v in outliers),
            ]
        )
    return buf.getvalue().encode("utf-8")


def export_report(records: Sequence[LegDelayRecord], format: str) -> bytes:
    """Render delay records as ``stats-json`` or ``boxplot-csv`` bytes."""
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if not records:
        raise EmptySample("no records to export")
    if format == "stats-json":
        return export_stats_json(records)
    return export_boxplot_csv(records)
