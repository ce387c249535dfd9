"""Plant data conditioning: validity filtering, 6:1 median downsampling and
train/test segment selection.

Series are held column-wise in numpy arrays rather than as lists of record
objects; :meth:`SampledSeries.record` gives the per-sample view when needed.
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InsufficientSegments, MalformedRow, SegmentTooShort, ShapeMismatch

CSV_HEADER = (
    "timestamp", "u1", "u2", "u3", "u1_sp", "u2_sp", "u3_sp",
    "y1", "y2", "sag_running", "expert_online",
)
RAW_PERIOD = 5.0
SAMPLE_PERIOD = 30.0
BLOCK = 6


class PlantRecord(NamedTuple):
    timestamp: float
    u: np.ndarray
    u_sp: np.ndarray
    y: np.ndarray
    sag_running: bool
    expert_online: bool


@dataclass(frozen=True)
class ValidityCriteria:
    min_feed: float = 0.0
    min_solids: float = 0.0
    require_sag_running: bool = True
    require_expert_online: bool = True

    def __post_init__(self):
        if self.min_feed < 0:
            raise ValueError("min_feed must be >= 0")
        if not 0 <= self.min_solids <= 100:
            raise ValueError("min_solids must lie in [0, 100]")


@dataclass(frozen=True)
class SampledSeries:
    """Uniformly sampled plant data.

    Attributes
    ----------
    timestamp : ndarray of shape (L,)
        Seconds since epoch, strictly increasing.
    u, u_sp : ndarray of shape (L, 3)
        Manipulated variables (tonnage t/h, solids %, speed rpm) and their
        setpoints.
    y : ndarray of shape (L, 2)
        Controlled variables (bearing pressure kPa, motor power kW).
    sag_running, expert_online : ndarray of bool, shape (L,)
    sample_period : float
        Seconds between consecutive samples.
    """

    timestamp: np.ndarray
    u: np.ndarray
    u_sp: np.ndarray
    y: np.ndarray
    sag_running: np.ndarray = None
    expert_online: np.ndarray = None
    sample_period: float = SAMPLE_PERIOD

    def __post_init__(self):
        ts = np.asarray(self.timestamp, dtype=float).reshape(-1)
        n = ts.size
        arrays = {"timestamp": ts}
        for name, width in (("u", 3), ("u_sp", 3), ("y", 2)):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 1 and n and a.size == width * n:
                a = a.reshape(n, width)
            if a.shape != (n, width):
                raise ShapeMismatch(f"{name} has shape {a.shape}, expected ({n}, {width})")
            arrays[name] = a
        for name in ("sag_running", "expert_online"):
            a = getattr(self, name)
            a = np.ones(n, dtype=bool) if a is None else np.asarray(a, dtype=bool).reshape(-1)
            if a.shape != (n,):
                raise ShapeMismatch(f"{name} has {a.size} entries, expected {n}")
            arrays[name] = a
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.timestamp.size

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return self.record(int(idx))
        return replace(
            self,
            timestamp=self.timestamp[idx], u=self.u[idx], u_sp=self.u_sp[idx], y=self.y[idx],
            sag_running=self.sag_running[idx], expert_online=self.expert_online[idx],
        )

    def record(self, i):
        return PlantRecord(
            float(self.timestamp[i]), self.u[i].copy(), self.u_sp[i].copy(), self.y[i].copy(),
            bool(self.sag_running[i]), bool(self.expert_online[i]),
        )

    @property
    def start(self):
        return float(self.timestamp[0]) if len(self) else float("nan")

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            timestamp=np.concatenate([p.timestamp for p in parts]),
            u=np.concatenate([p.u for p in parts]),
            u_sp=np.concatenate([p.u_sp for p in parts]),
            y=np.concatenate([p.y for p in parts]),
            sag_running=np.concatenate([p.sag_running for p in parts]),
            expert_online=np.concatenate([p.expert_online for p in parts]),
            sample_period=parts[0].sample_period,
        )


def valid_mask(series, criteria):
    ok = (series.u[:, 0] >= criteria.min_feed) & (series.u[:, 1] >= criteria.min_solids)
    if criteria.require_sag_running:
        ok &= series.sag_running
    if criteria.require_expert_online:
        ok &= series.expert_online
    return ok & np.isfinite(series.u).all(axis=1) & np.isfinite(series.y).all(axis=1)


def filter_valid(series, criteria, sample_period=None):
    """Split a series into maximal contiguous runs of valid records.

    A record is dropped when it fails any criterion; a run is also broken
    wherever the timestamp step differs from ``sample_period`` (missing
    samples), since identification assumes uniform sampling.

    Returns
    -------
    list of SampledSeries
    """
    if len(series) == 0:
        return []
    period = series.sample_period if sample_period is None else float(sample_period)
    ok = valid_mask(series, criteria)
    # a new run starts at i if i is valid and (i-1 invalid or a timing gap precedes i)
    gap = np.ones(len(series), dtype=bool)
    gap[1:] = ~np.isclose(np.diff(series.timestamp), period, rtol=0.0, atol=1e-6 * period)
    prev_ok = np.concatenate(([False], ok[:-1]))
    starts = np.flatnonzero(ok & (gap | ~prev_ok))
    segments = []
    for s in starts:
        e = s + 1
        while e < len(series) and ok[e] and not gap[e]:
            e += 1
        segments.append(replace(series[s:e], sample_period=period))
    return segments


def median_downsample(segment, block=BLOCK):
    """Component-wise median over non-overlapping blocks of ``block`` samples.

    The output timestamp is that of the last sample in each block (the
    instant the median becomes available) and the flags are the logical AND
    over the block. A trailing partial block is discarded.
    """
    n = len(segment)
    if n < block:
        raise SegmentTooShort(f"segment has {n} records, need at least {block}")
    nb = n // block
    cut = nb * block

    def med(a):
        return np.median(a[:cut].reshape(nb, block, -1), axis=1)

    return SampledSeries(
        timestamp=segment.timestamp[block - 1:cut:block],
        u=med(segment.u),
        u_sp=med(segment.u_sp),
        y=med(segment.y),
        sag_running=segment.sag_running[:cut].reshape(nb, block).all(axis=1),
        expert_online=segment.expert_online[:cut].reshape(nb, block).all(axis=1),
        sample_period=segment.sample_period * block,
    )


def select_train_test(segments):
    """Longest segment for training, second longest for testing.

    Ties are broken by the earlier start time.
    """
    if len(segments) < 2:
        raise InsufficientSegments(f"need at least two segments, got {len(segments)}")
    ranked = sorted(segments, key=lambda s: (-len(s), s.start))
    return ranked[0], ranked[1]


@dataclass
class ConditionedData:
    segments: list
    manifest: list = field(default_factory=list)  # (segment_id, start_row, length)

    @property
    def series(self):
        return SampledSeries.concatenate(self.segments)


def condition(raw, criteria, block=BLOCK):
    """Filter, split and downsample a raw 5 s series.

    Segments too short to yield a single downsampled record are dropped.
    """
    out, manifest, row = [], [], 0
    for seg in filter_valid(raw, criteria):
        if len(seg) < block:
            continue
        ds = median_downsample(seg, block)
        manifest.append((len(out), row, len(ds)))
        out.append(ds)
        row += len(ds)
    return ConditionedData(out, manifest)


# -- CSV --------------------------------------------------------------------

def read_csv(path, sample_period=None):
    """Read a plant CSV with the standard header.

    ``sample_period`` defaults to the median timestamp step (or 30 s for
    files with fewer than two rows).

    Raises
    ------
    MalformedRow
        With the 1-based file line number of the first bad row.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return _from_rows([], sample_period)
        header = [h.strip() for h in header]
        if tuple(header) != CSV_HEADER:
            raise MalformedRow(1, f"unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise MalformedRow(lineno, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row[:9]]
                flags = [_parse_flag(c) for c in row[9:]]
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from None
            if not all(np.isfinite(vals)):
                raise MalformedRow(lineno, "non-finite value")
            rows.append((vals, flags, lineno))
    ts = [r[0][0] for r in rows]
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            raise MalformedRow(rows[i][2], "timestamps must be strictly increasing")
    return _from_rows(rows, sample_period)


def _parse_flag(text):
    text = text.strip()
    if text not in ("0", "1"):
        raise ValueError(f"flag must be 0 or 1, got {text!r}")
    return text == "1"


def _from_rows(rows, sample_period):
    if rows:
        num = np.array([r[0] for r in rows], dtype=float)
        flags = np.array([r[1] for r in rows], dtype=bool)
    else:
        num = np.empty((0, 9))
        flags = np.empty((0, 2), dtype=bool)
    if sample_period is None:
        sample_period = float(np.median(np.diff(num[:, 0]))) if len(num) > 1 else SAMPLE_PERIOD
    return SampledSeries(
        timestamp=num[:, 0], u=num[:, 1:4], u_sp=num[:, 4:7], y=num[:, 7:9],
        sag_running=flags[:, 0], expert_online=flags[:, 1], sample_period=sample_period,
    )


def write_csv(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(series)):
            w.writerow(
                [repr(float(series.timestamp[i]))]
                + [repr(float(v)) for v in series.u[i]]
                + [repr(float(v)) for v in series.u_sp[i]]
                + [repr(float(v)) for v in series.y[i]]
                + [int(series.sag_running[i]), int(series.expert_online[i])]
            )


def write_manifest(manifest, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("segment_id", "start_row", "length"))
        w.writerows(manifest)


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [tuple(int(c) for c in row) for row in reader if row]


def split_by_manifest(series, manifest):
    return [series[s:s + n] for _, s, n in manifest]


def load_segments(path):
    """Read a conditioned CSV, honouring a sibling ``manifest.csv`` if present."""
    path = Path(path)
    series = read_csv(path)
    mpath = path.with_name("manifest.csv")
    if mpath.exists() and path.name == "conditioned.csv":
        return split_by_manifest(series, read_manifest(mpath))
    return [series]
