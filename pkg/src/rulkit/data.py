"""S.M.A.R.T. log ingestion, RUL labeling, normalization, and windowing.

The pipeline consumes Backblaze-style daily CSV logs (one row per drive per
day), keeps drives that end in a recorded failure, labels each day with its
remaining useful life in whole days, and emits overlapping fixed-length
feature windows suitable for sequence training.

Dates drive the labels: a history with gaps is treated as a contiguous
sequence of available logs, but RUL is always computed from true calendar
dates, so windows that span a gap have targets that drop by more than one.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("date", "serial_number", "model", "failure")

# Keep at most this many days before the failure day (plus the failure day).
DEFAULT_HISTORY_CAP_DAYS = 60


@dataclass
class SmartRecord:
    """One daily log row; missing feature cells are NaN."""

    date: dt.date
    serial: str
    model: str
    failure: bool
    features: np.ndarray


class DriveHistory:
    """Ordered daily records of one drive, ending at its failure record."""

    def __init__(self, serial: str, records: Sequence[SmartRecord]):
        if not records:
            raise DataError(f"drive {serial}: empty history")
        for prev, cur in zip(records, records[1:]):
            if cur.date <= prev.date:
                raise DataError(f"drive {serial}: dates not strictly increasing at {cur.date}")
        if not records[-1].failure:
            raise DataError(f"drive {serial}: last record does not carry the failure flag")
        for r in records[:-1]:
            if r.failure:
                raise DataError(f"drive {serial}: failure flagged before the final record ({r.date})")
        self.serial = serial
        self.records = list(records)

    @property
    def failure_date(self) -> dt.date:
        return self.records[-1].date

    def __len__(self) -> int:
        return len(self.records)

    def feature_matrix(self) -> np.ndarray:
        """[D, F] float32 with missing cells forward-filled from the previous
        day; cells missing since the first day remain NaN."""
        mat = np.stack([r.features for r in self.records]).astype(np.float32)
        for t in range(1, mat.shape[0]):
            nan = np.isnan(mat[t])
            if nan.any():
                mat[t, nan] = mat[t - 1, nan]
        return mat


def label_rul(history: DriveHistory) -> np.ndarray:
    """Whole days until the recorded failure, per record: failure day is 0,
    the day before is 1, and so on."""
    failure = history.failure_date
    rul = np.array([(failure - r.date).days for r in history.records], dtype=np.int64)
    if (rul < 0).any():
        bad = history.records[int(np.argmax(rul < 0))].date
        raise DataError(f"drive {history.serial}: record dated {bad} after failure {failure}")
    return rul


@dataclass
class NormStats:
    """Per-feature mean and standard deviation from the training split only."""

    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-6

    @classmethod
    def from_histories(cls, histories: Sequence[DriveHistory], eps: float = 1e-6) -> "NormStats":
        if not histories:
            raise DataError("cannot compute normalization stats from an empty training split")
        stacked = np.concatenate([h.feature_matrix() for h in histories], axis=0).astype(np.float64)
        mean = np.nanmean(stacked, axis=0)
        mean = np.where(np.isnan(mean), 0.0, mean)
        std = np.nanstd(stacked, axis=0)
        std = np.where(np.isnan(std), 1.0, std)
        return cls(mean=mean, std=np.maximum(std, eps), eps=eps)

    def normalize(self, features: np.ndarray) -> np.ndarray:
        filled = np.where(np.isnan(features), self.mean, features)
        return ((filled - self.mean) / self.std).astype(np.float32)

    def denormalize(self, normalized: np.ndarray) -> np.ndarray:
        return (normalized * self.std + self.mean).astype(np.float32)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64),
                   eps=float(d.get("eps", 1e-6)))


@dataclass
class WindowSample:
    """One fixed-length training sample.

    ``day_index`` holds the proleptic-Gregorian ordinal of each step's
    calendar day, so overlapping windows of the same drive agree on which day
    a step refers to. ``targets`` are that day's RUL in days.
    """

    serial: str
    day_index: np.ndarray
    targets: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        if not (len(self.day_index) == len(self.targets) == self.features.shape[0]):
            raise DataError(
                f"window for {self.serial}: misaligned lengths "
                f"{len(self.day_index)}/{len(self.targets)}/{self.features.shape[0]}"
            )
        if np.any(np.diff(self.targets) >= 0):
            raise DataError(f"window for {self.serial}: targets must be strictly decreasing")


def make_windows(history: DriveHistory, window: int, stats: NormStats) -> list[WindowSample]:
    """All stride-1 windows of the history; empty if the history is shorter
    than one window."""
    depth = len(history)
    if depth < window:
        log.warning("drive %s: %d days < window %d, skipped", history.serial, depth, window)
        return []
    features = stats.normalize(history.feature_matrix())
    targets = label_rul(history).astype(np.float32)
    days = np.array([r.date.toordinal() for r in history.records], dtype=np.int64)
    return [
        WindowSample(
            serial=history.serial,
            day_index=days[s:s + window],
            targets=targets[s:s + window],
            features=features[s:s + window],
        )
        for s in range(depth - window + 1)
    ]


def split_by_date(histories: Sequence[DriveHistory], val_start: dt.date,
                  test_start: dt.date) -> dict[str, list[DriveHistory]]:
    """Assign each drive to train/val/test by failure date, closed on the
    left: a failure exactly on a boundary belongs to the later split."""
    if not val_start < test_start:
        raise DataError(f"split boundaries out of order: val {val_start} >= test {test_start}")
    splits: dict[str, list[DriveHistory]] = {"train": [], "val": [], "test": []}
    for h in histories:
        if h.failure_date >= test_start:
            splits["test"].append(h)
        elif h.failure_date >= val_start:
            splits["val"].append(h)
        else:
            splits["train"].append(h)
    for name, drives in splits.items():
        if not drives:
            log.warning("split %r is empty", name)
    return splits


@dataclass
class IngestReport:
    histories: list[DriveHistory] = field(default_factory=list)
    rows_read: int = 0
    duplicate_rows: int = 0
    post_failure_rows: int = 0
    serials_without_failure: int = 0


def _parse_date(raw: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw.strip())
    except ValueError:
        raise DataError(f"{where}: unparseable date {raw!r}") from None


def _parse_failure(raw: str, where: str) -> bool:
    v = raw.strip()
    if v == "0":
        return False
    if v == "1":
        return True
    raise DataError(f"{where}: unparseable failure flag {raw!r} (expected 0 or 1)")


def _parse_feature(raw: Optional[str]) -> float:
    if raw is None or raw.strip() == "":
        return float("nan")
    return float(raw)


def ingest_csv(paths: Iterable[str | Path], feature_columns: Sequence[str],
               model_filter: Optional[str] = None,
               history_cap_days: Optional[int] = DEFAULT_HISTORY_CAP_DAYS) -> IngestReport:
    """Read daily log CSVs into per-drive histories.

    Only drives with a recorded failure are kept (healthy drives carry no RUL
    label). Duplicate (serial, date) rows keep the first occurrence; rows
    dated after a drive's failure are dropped. Histories are capped to the
    ``history_cap_days`` days preceding the failure plus the failure day.
    """
    report = IngestReport()
    by_serial: dict[str, list[SmartRecord]] = {}
    for path in paths:
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in (*REQUIRED_COLUMNS, *feature_columns):
                if col not in header:
                    raise DataError(f"{path}: missing required column {col!r}")
            for lineno, row in enumerate(reader, start=2):
                report.rows_read += 1
                if model_filter is not None and row["model"] != model_filter:
                    continue
                where = f"{path}:{lineno}"
                date = _parse_date(row["date"], where)
                failure = _parse_failure(row["failure"], where)
                try:
                    features = np.array([_parse_feature(row[c]) for c in feature_columns],
                                        dtype=np.float32)
                except ValueError as exc:
                    raise DataError(f"{where}: unparseable feature cell ({exc})") from None
                record = SmartRecord(date=date, serial=row["serial_number"],
                                     model=row["model"], failure=failure, features=features)
                by_serial.setdefault(record.serial, []).append(record)

    for serial in sorted(by_serial):
        records = sorted(by_serial[serial], key=lambda r: r.date)
        deduped: list[SmartRecord] = []
        for r in records:
            if deduped and r.date == deduped[-1].date:
                report.duplicate_rows += 1
                continue
            deduped.append(r)
        failure_dates = [r.date for r in deduped if r.failure]
        if not failure_dates:
            report.serials_without_failure += 1
            continue
        failure_date = failure_dates[0]
        kept = [r for r in deduped if r.date <= failure_date]
        report.post_failure_rows += len(deduped) - len(kept)
        if history_cap_days is not None:
            kept = [r for r in kept if (failure_date - r.date).days <= history_cap_days]
        report.histories.append(DriveHistory(serial, kept))

    if report.duplicate_rows:
        log.warning("dropped %d duplicate (serial, date) rows", report.duplicate_rows)
    if report.post_failure_rows:
        log.warning("dropped %d rows dated after their drive's failure", report.post_failure_rows)
    if report.serials_without_failure:
        log.info("skipped %d serials without a failure record", report.serials_without_failure)
    return report


# -- prepared-dataset serialization (newline-delimited JSON + sidecar) -------

def write_windows(path: str | Path, samples: Sequence[WindowSample]) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({
                "serial": s.serial,
                "day_index": s.day_index.tolist(),
                "targets": [float(t) for t in s.targets],
                "features": [[float(v) for v in row] for row in s.features],
            }, separators=(",", ":")))
            fh.write("\n")


def read_windows(path: str | Path) -> list[WindowSample]:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                samples.append(WindowSample(
                    serial=obj["serial"],
                    day_index=np.asarray(obj["day_index"], dtype=np.int64),
                    targets=np.asarray(obj["targets"], dtype=np.float32),
                    features=np.asarray(obj["features"], dtype=np.float32),
                ))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad window record ({exc})") from None
    return samples


def write_stats_sidecar(path: str | Path, stats: NormStats, feature_columns: Sequence[str],
                        window: int, extra: Optional[dict] = None) -> None:
    doc = {
        "feature_columns": list(feature_columns),
        "window": window,
        "stats": stats.to_dict(),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_stats_sidecar(path: str | Path) -> tuple[NormStats, list[str], int, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        stats = NormStats.from_dict(doc["stats"])
        return stats, list(doc["feature_columns"]), int(doc["window"]), doc
    except KeyError as exc:
        raise DataError(f"{path}: missing key {exc} in stats sidecar") from None
