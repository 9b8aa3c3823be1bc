"""Test-set evaluation: RMSE, per-day overlap aggregation, confidence rows.

Overlapping windows give each calendar day of a drive several predictions
(one from every window containing it). Per day we report the sample mean as
the point estimate, the standard error s/sqrt(n) as the printed margin, and a
Student-t interval mean +/- t_{(1+gamma)/2, n-1} * s/sqrt(n). Days covered by
a single window get a degenerate interval equal to the point estimate.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .data import WindowSample
from .errors import DataError
from .studentt import student_t_quantile
from .training import rmse

log = logging.getLogger(__name__)


class Predictor(Protocol):
    def predict(self, windows: np.ndarray) -> np.ndarray: ...


@dataclass
class DayAggregate:
    serial: str
    day: int  # proleptic-Gregorian ordinal
    true_rul: float
    preds: list[float] = field(default_factory=list)


@dataclass
class ConfidenceRow:
    serial: str
    true_rul: int
    n: int
    point_estimate: float
    std_error: float
    ci_low: float
    ci_high: float


def aggregate_overlaps(samples: Sequence[WindowSample],
                       predictions: np.ndarray) -> dict[tuple[str, int], DayAggregate]:
    """Collect one prediction per (drive, calendar day) from every window
    containing that day. Windows sharing a day must agree on its target."""
    predictions = np.asarray(predictions)
    if predictions.shape[0] != len(samples):
        raise DataError(
            f"misaligned lengths: {predictions.shape[0]} prediction rows "
            f"for {len(samples)} windows"
        )
    aggregates: dict[tuple[str, int], DayAggregate] = {}
    for sample, preds in zip(samples, predictions):
        if len(preds) != len(sample.day_index):
            raise DataError(
                f"misaligned lengths: window for {sample.serial} has "
                f"{len(sample.day_index)} steps but {len(preds)} predictions"
            )
        for day, target, pred in zip(sample.day_index, sample.targets, preds):
            key = (sample.serial, int(day))
            agg = aggregates.get(key)
            if agg is None:
                agg = aggregates[key] = DayAggregate(sample.serial, int(day), float(target))
            elif agg.true_rul != float(target):
                raise DataError(
                    f"drive {sample.serial} day {day}: windows disagree on target "
                    f"({agg.true_rul} vs {float(target)})"
                )
            agg.preds.append(float(pred))
    return aggregates


def confidence_margin(preds: Sequence[float],
                      gamma: float = 0.90) -> tuple[int, float, float, float, float]:
    """(n, point estimate, standard error, ci_low, ci_high) for one day.

    Point estimate is the sample mean; the margin is s/sqrt(n) with the n-1
    sample standard deviation; the interval uses the two-sided Student-t
    critical value at confidence ``gamma``. n=1 degenerates to a zero margin
    and a point interval.
    """
    if len(preds) == 0:
        raise ValueError("confidence_margin needs at least one prediction")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    arr = np.asarray(preds, dtype=np.float64)
    n = arr.size
    point = float(arr.mean())
    if n == 1:
        return 1, point, 0.0, point, point
    std_error = float(arr.std(ddof=1) / math.sqrt(n))
    critical = student_t_quantile((1.0 + gamma) / 2.0, n - 1)
    half = critical * std_error
    return n, point, std_error, point - half, point + half


def _clip(value: float) -> float:
    return max(0.0, value)


def rows_from_aggregates(aggregates: dict[tuple[str, int], DayAggregate],
                         gamma: float = 0.90,
                         clip_negative: bool = False) -> list[ConfidenceRow]:
    """One row per (drive, day), sorted by serial then descending true RUL."""
    rows = []
    for agg in aggregates.values():
        n, point, se, lo, hi = confidence_margin(agg.preds, gamma)
        if clip_negative:
            point, lo, hi = _clip(point), _clip(lo), _clip(hi)
        rows.append(ConfidenceRow(agg.serial, int(round(agg.true_rul)), n, point, se, lo, hi))
    rows.sort(key=lambda r: (r.serial, -r.true_rul))
    return rows


def pooled_rows(aggregates: dict[tuple[str, int], DayAggregate],
                gamma: float = 0.90, clip_negative: bool = False) -> list[ConfidenceRow]:
    """Rows pooled across drives by true RUL value (serial column is 'ALL')."""
    by_rul: dict[int, list[float]] = {}
    for agg in aggregates.values():
        by_rul.setdefault(int(round(agg.true_rul)), []).extend(agg.preds)
    rows = []
    for true_rul in sorted(by_rul, reverse=True):
        n, point, se, lo, hi = confidence_margin(by_rul[true_rul], gamma)
        if clip_negative:
            point, lo, hi = _clip(point), _clip(lo), _clip(hi)
        rows.append(ConfidenceRow("ALL", true_rul, n, point, se, lo, hi))
    return rows


@dataclass
class EvalResult:
    test_rmse: float
    rows: list[ConfidenceRow]
    aggregates: dict[tuple[str, int], DayAggregate]
    trace: list[tuple[str, int, float, float]]  # (serial, day ordinal, true, predicted)
    n_windows: int
    n_drives: int


def evaluate(model: Predictor, windows: Sequence[WindowSample],
             gamma: float = 0.90, clip_negative: bool = False) -> EvalResult:
    """Predict every window, score overall RMSE, and build per-day tables."""
    if not windows:
        raise DataError("evaluation set is empty")
    features = np.stack([w.features for w in windows]).astype(np.float32)
    targets = np.stack([w.targets for w in windows]).astype(np.float32)
    predictions = np.asarray(model.predict(features))
    test_rmse = rmse(predictions, targets)
    aggregates = aggregate_overlaps(windows, predictions)
    rows = rows_from_aggregates(aggregates, gamma, clip_negative)
    trace = []
    for key in sorted(aggregates):
        agg = aggregates[key]
        point = float(np.mean(agg.preds))
        if clip_negative:
            point = _clip(point)
        trace.append((agg.serial, agg.day, agg.true_rul, point))
    n_drives = len({w.serial for w in windows})
    return EvalResult(test_rmse, rows, aggregates, trace, len(windows), n_drives)


def emit_report(rows: Sequence[ConfidenceRow], path: str | Path) -> None:
    """Confidence table CSV, two-decimal fixed precision."""
    with open(path, "w") as fh:
        fh.write("serial,true_rul,n,point_estimate,std_error,ci_low,ci_high\n")
        for r in rows:
            fh.write(f"{r.serial},{r.true_rul},{r.n},{r.point_estimate:.2f},"
                     f"{r.std_error:.2f},{r.ci_low:.2f},{r.ci_high:.2f}\n")


def emit_trace(trace: Sequence[tuple[str, int, float, float]], path: str | Path) -> None:
    """Per-day (true, predicted) pairs for plotting, as CSV."""
    with open(path, "w") as fh:
        fh.write("serial,day,true_rul,predicted_rul\n")
        for serial, day, true_rul, predicted in trace:
            date = dt.date.fromordinal(day).isoformat()
            fh.write(f"{serial},{date},{true_rul:.0f},{predicted:.2f}\n")


def emit_summary(path: str | Path, result: EvalResult, extra: Optional[dict] = None) -> None:
    doc = {
        "test_rmse": result.test_rmse,
        "n_drives": result.n_drives,
        "n_windows": result.n_windows,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_day_predictions(aggregates: dict[tuple[str, int], DayAggregate],
                         path: str | Path) -> None:
    """Raw per-day prediction lists (full precision) for later re-reporting."""
    with open(path, "w") as fh:
        for (serial, day), agg in sorted(aggregates.items()):
            fh.write(json.dumps({
                "serial": serial,
                "day": day,
                "true_rul": agg.true_rul,
                "preds": agg.preds,
            }, separators=(",", ":")))
            fh.write("\n")


def load_day_predictions(path: str | Path) -> dict[tuple[str, int], DayAggregate]:
    aggregates: dict[tuple[str, int], DayAggregate] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                agg = DayAggregate(obj["serial"], int(obj["day"]), float(obj["true_rul"]),
                                   [float(v) for v in obj["preds"]])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad day-prediction record ({exc})") from None
            aggregates[(agg.serial, agg.day)] = agg
    return aggregates
