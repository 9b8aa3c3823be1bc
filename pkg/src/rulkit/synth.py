"""Synthetic drive-health generator.

Stands in for multi-year daily log archives at desk scale. Each drive carries
a latent health that decays with per-drive drift plus random-walk noise;
failure fires when health crosses zero. Features are noisy linear readouts of
health plus a seasonal term, so the feature windows genuinely predict the
remaining lifetime. Everything derives from one seed.
"""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DriveHistory, SmartRecord

SYNTH_MODEL = "ST4000DM000"
SYNTH_CAPACITY_BYTES = 4000787030016

# Plausible attribute ids for generated column names.
_SMART_IDS = (1, 3, 4, 5, 7, 9, 10, 12, 187, 188, 190, 193, 194, 196, 197, 198, 199,
              240, 241, 242)

_FAIL_WINDOW_START = dt.date(2018, 1, 1)
_FAIL_WINDOW_END = dt.date(2021, 12, 31)


def synth_feature_columns(n_features: int) -> list[str]:
    ids = list(_SMART_IDS)
    next_id = max(_SMART_IDS) + 1
    while len(ids) < n_features:
        ids.append(next_id)
        next_id += 1
    return [f"smart_{i}_raw" for i in ids[:n_features]]


def synth_generate(n_drives: int, n_features: int, seed: int,
                   min_days: int = 40, max_days: int = 120) -> list[DriveHistory]:
    """Deterministic synthetic drive histories, each ending in failure."""
    if n_drives < 1:
        raise ValueError(f"n_drives must be >= 1, got {n_drives}")
    if not 2 <= min_days <= max_days:
        raise ValueError(f"bad day range [{min_days}, {max_days}]")
    children = np.random.SeedSequence(seed).spawn(n_drives)
    fail_span = (_FAIL_WINDOW_END - _FAIL_WINDOW_START).days
    histories = []
    for idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        lifetime = int(rng.integers(min_days + 5, max_days - 5))
        drift = 1.0 / lifetime
        walk = np.cumsum(rng.normal(0.0, 0.005, size=max_days))
        health = 1.0 - drift * np.arange(1, max_days + 1) + walk
        crossings = np.flatnonzero(health <= 0.0)
        depth = int(crossings[0]) + 1 if crossings.size else max_days
        depth = int(np.clip(depth, min_days, max_days))
        health = health[:depth]

        loading = rng.uniform(0.5, 2.0, size=n_features) * rng.choice([-1.0, 1.0], size=n_features)
        offset = rng.uniform(-1.0, 1.0, size=n_features)
        amp = rng.uniform(0.0, 0.3, size=n_features)
        period = rng.choice([7.0, 14.0, 30.0], size=n_features)
        phase = rng.uniform(0.0, 1.0, size=n_features) * period
        t = np.arange(depth, dtype=np.float64)[:, None]
        seasonal = amp * np.sin(2.0 * np.pi * (t + phase) / period)
        noise = rng.normal(0.0, 0.05, size=(depth, n_features))
        values = offset + loading * health[:, None] + seasonal + noise

        failure_date = _FAIL_WINDOW_START + dt.timedelta(days=int(rng.integers(0, fail_span + 1)))
        start_date = failure_date - dt.timedelta(days=depth - 1)
        serial = f"SYN{idx:05d}"
        records = [
            SmartRecord(
                date=start_date + dt.timedelta(days=day),
                serial=serial,
                model=SYNTH_MODEL,
                failure=(day == depth - 1),
                features=values[day].astype(np.float32),
            )
            for day in range(depth)
        ]
        histories.append(DriveHistory(serial, records))
    return histories


def write_smart_csvs(histories: Sequence[DriveHistory], out_dir: str | Path,
                     feature_columns: Sequence[str]) -> list[Path]:
    """Emit daily-log CSVs in the Backblaze schema, one file per quarter.

    Rows are sorted by (date, serial) so output is byte-stable per seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = sorted(
        ((r.date, h.serial, r) for h in histories for r in h.records),
        key=lambda item: (item[0], item[1]),
    )
    by_quarter: dict[tuple[int, int], list] = {}
    for date, serial, record in rows:
        by_quarter.setdefault((date.year, (date.month - 1) // 3 + 1), []).append(record)

    header = ["date", "serial_number", "model", "capacity_bytes", "failure",
              *feature_columns]
    paths = []
    for (year, quarter), records in sorted(by_quarter.items()):
        path = out_dir / f"smart_{year}Q{quarter}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in records:
                writer.writerow([
                    r.date.isoformat(), r.serial, r.model, SYNTH_CAPACITY_BYTES,
                    int(r.failure), *[f"{v:.6f}" for v in r.features],
                ])
        paths.append(path)
    return paths
