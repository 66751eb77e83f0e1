"""GPS trace ingestion, anchor calibration, filtering, and query/reference splits."""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyTraceError

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = EARTH_RADIUS_M * np.pi / 180.0

# Day boundaries are computed in a fixed UTC offset rather than inferred from
# the data; +8 matches the east-Asian vehicle feeds this library grew out of.
DEFAULT_UTC_OFFSET_HOURS = 8

# Candidate pool when re-ranking KD-tree hits by exact distance.
_NEAREST_POOL = 8


@dataclass(frozen=True)
class RawPoint:
    """One GPS fix: WGS84 degrees plus an epoch-seconds timestamp."""

    lon: float
    lat: float
    t: int


@dataclass
class Trace:
    """A calibrated trace: chronological (anchor_id, timestamp) pairs."""

    object_id: str
    points: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.points)

    def anchor_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for anchor_id, _ in self.points:
            counts[anchor_id] = counts.get(anchor_id, 0) + 1
        return counts

    def anchor_ids(self) -> set[int]:
        return {anchor_id for anchor_id, _ in self.points}


class AnchorSet:
    """Immutable anchor vocabulary; ids are dense in [0, len).

    Shared read-only across threads; the lookup trees are built lazily and
    cached on first use.
    """

    def __init__(self, lons: Sequence[float], lats: Sequence[float]):
        self.lons = np.asarray(lons, dtype=float)
        self.lats = np.asarray(lats, dtype=float)
        if self.lons.ndim != 1 or self.lons.shape != self.lats.shape:
            raise ValueError("lons and lats must be parallel 1-d sequences")
        if len(self.lons) == 0:
            raise ValueError("anchor set must contain at least one anchor")
        self._planar_tree: cKDTree | None = None
        self._sphere_tree: cKDTree | None = None

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[int, float, float]]) -> "AnchorSet":
        ordered = sorted(rows)
        ids = [r[0] for r in ordered]
        if ids != list(range(len(ids))):
            raise ValueError("anchor ids must be unique and dense in [0, n)")
        return cls([r[1] for r in ordered], [r[2] for r in ordered])

    def __len__(self) -> int:
        return len(self.lons)

    def lonlat(self, anchor_id: int) -> tuple[float, float]:
        return float(self.lons[anchor_id]), float(self.lats[anchor_id])

    def planar_tree(self) -> cKDTree:
        if self._planar_tree is None:
            self._planar_tree = cKDTree(np.column_stack([self.lons, self.lats]))
        return self._planar_tree

    def sphere_tree(self) -> cKDTree:
        if self._sphere_tree is None:
            self._sphere_tree = cKDTree(_unit_sphere(self.lons, self.lats))
        return self._sphere_tree


def haversine_m(lon1, lat1, lon2, lat2):
    """Great-circle distance in meters; accepts scalars or numpy arrays."""
    lon1, lat1, lon2, lat2 = (
        np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2)
    )
    a = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return EARTH_RADIUS_M * 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _unit_sphere(lons, lats) -> np.ndarray:
    lon_r = np.radians(np.asarray(lons, dtype=float))
    lat_r = np.radians(np.asarray(lats, dtype=float))
    return np.column_stack(
        [np.cos(lat_r) * np.cos(lon_r), np.cos(lat_r) * np.sin(lon_r), np.sin(lat_r)]
    )


def nearest_anchors(anchors: AnchorSet, lons, lats, metric: str = "haversine") -> np.ndarray:
    """Nearest anchor id for each (lon, lat); exact ties go to the lowest id.

    Chord distance on the unit sphere is monotone in great-circle distance, so
    KD-tree candidates are retrieved in 3-d and re-ranked with the exact
    metric before tie-breaking.
    """
    lons = np.atleast_1d(np.asarray(lons, dtype=float))
    lats = np.atleast_1d(np.asarray(lats, dtype=float))
    n = len(lons)
    k = min(_NEAREST_POOL, len(anchors))
    if metric == "planar":
        _, idx = anchors.planar_tree().query(np.column_stack([lons, lats]), k=k)
        idx = idx.reshape(n, k)
        exact = np.hypot(
            anchors.lons[idx] - lons[:, None], anchors.lats[idx] - lats[:, None]
        )
    elif metric == "haversine":
        _, idx = anchors.sphere_tree().query(_unit_sphere(lons, lats), k=k)
        idx = idx.reshape(n, k)
        exact = haversine_m(
            lons[:, None], lats[:, None], anchors.lons[idx], anchors.lats[idx]
        )
    else:
        raise ValueError(f"unknown calibration metric: {metric!r}")
    dmin = exact.min(axis=1, keepdims=True)
    eps = 1e-9 * np.maximum(dmin, 1.0)
    candidates = np.where(exact <= dmin + eps, idx, len(anchors))
    return candidates.min(axis=1)


def calibrate_trace(
    object_id: str,
    raw: Sequence[RawPoint],
    anchors: AnchorSet,
    metric: str = "haversine",
) -> Trace:
    """Snap raw fixes to their nearest anchors and collapse consecutive repeats.

    Input is sorted by timestamp first; a run of points snapping to the same
    anchor keeps only its earliest timestamp.
    """
    if not raw:
        raise EmptyTraceError(f"no raw points for object {object_id!r}")
    ordered = sorted(raw, key=lambda p: p.t)
    ids = nearest_anchors(
        anchors,
        [p.lon for p in ordered],
        [p.lat for p in ordered],
        metric=metric,
    )
    points: list[tuple[int, int]] = []
    for anchor_id, p in zip(ids.tolist(), ordered):
        if points and points[-1][0] == anchor_id:
            continue
        points.append((int(anchor_id), int(p.t)))
    return Trace(object_id, points)


def filter_min_points(traces: Iterable[Trace], min_points: int) -> list[Trace]:
    """Keep traces with at least min_points calibrated points, order preserved."""
    if min_points < 0:
        raise ValueError("min_points must be >= 0")
    return [t for t in traces if len(t) >= min_points]


@dataclass(frozen=True)
class SplitStrategy:
    """Rule assigning each object's day-groups to the query or reference half."""

    name: str
    q_days: int = 0
    seed: int = 0

    _NAMES = ("interleaved", "serial", "random", "weekday_weekend")

    def __post_init__(self) -> None:
        if self.name not in self._NAMES:
            raise ValueError(f"unknown split strategy {self.name!r}")
        if self.name in ("serial", "random") and self.q_days < 1:
            raise ValueError(f"{self.name} split needs q_days >= 1")

    @classmethod
    def interleaved(cls) -> "SplitStrategy":
        return cls("interleaved")

    @classmethod
    def serial(cls, q_days: int) -> "SplitStrategy":
        return cls("serial", q_days=q_days)

    @classmethod
    def random(cls, q_days: int, seed: int = 0) -> "SplitStrategy":
        return cls("random", q_days=q_days, seed=seed)

    @classmethod
    def weekday_weekend(cls) -> "SplitStrategy":
        return cls("weekday_weekend")


@dataclass
class SplitResult:
    q: list[Trace]
    d: list[Trace]
    flagged: list[str]  # object ids left with an empty half


def local_date(t: int, utc_offset_hours: int = DEFAULT_UTC_OFFSET_HOURS) -> date:
    return datetime.fromtimestamp(
        int(t) + utc_offset_hours * 3600, tz=timezone.utc
    ).date()


def _query_dates(
    object_id: str, dates: list[date], strategy: SplitStrategy
) -> set[date]:
    if strategy.name == "interleaved":
        return {d for d in dates if d.day % 2 == 1}
    if strategy.name == "weekday_weekend":
        return {d for d in dates if d.weekday() >= 5}
    ordered = sorted(set(dates))
    take = min(strategy.q_days, len(ordered))
    if strategy.name == "serial":
        return set(ordered[:take])
    # random: a per-object generator keyed on (seed, object id) keeps each
    # object's split stable when other objects come and go
    rng = random.Random(f"{strategy.seed}:{object_id}")
    return set(rng.sample(ordered, take))


def split_dataset(
    traces: Iterable[Trace],
    strategy: SplitStrategy,
    utc_offset_hours: int = DEFAULT_UTC_OFFSET_HOURS,
) -> SplitResult:
    """Split every trace into a query half and a reference half by calendar day.

    Each object appears in both halves; objects whose strategy leaves one half
    empty are still emitted but reported in ``flagged`` so downstream accuracy
    denominators can exclude them.
    """
    q_half: list[Trace] = []
    d_half: list[Trace] = []
    flagged: list[str] = []
    for trace in traces:
        dates = [local_date(t, utc_offset_hours) for _, t in trace.points]
        to_q = _query_dates(trace.object_id, dates, strategy)
        q_points = [p for p, day in zip(trace.points, dates) if day in to_q]
        d_points = [p for p, day in zip(trace.points, dates) if day not in to_q]
        if not q_points or not d_points:
            flagged.append(trace.object_id)
        q_half.append(Trace(trace.object_id, q_points))
        d_half.append(Trace(trace.object_id, d_points))
    return SplitResult(q_half, d_half, flagged)


# ---------------------------------------------------------------------------
# File formats


def read_raw_csv(path: str | Path) -> dict[str, list[RawPoint]]:
    """Read `object_id,lon,lat,timestamp` rows grouped by object."""
    out: dict[str, list[RawPoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["object_id", "lon", "lat", "timestamp"]:
            raise ValueError(f"bad raw trace header in {path}: {header}")
        for row in reader:
            if not row:
                continue
            oid, lon, lat, t = row
            out.setdefault(oid, []).append(RawPoint(float(lon), float(lat), int(t)))
    return out


def write_raw_csv(path: str | Path, raw: dict[str, list[RawPoint]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object_id", "lon", "lat", "timestamp"])
        for oid in raw:
            for p in raw[oid]:
                writer.writerow([oid, repr(p.lon), repr(p.lat), p.t])


def read_anchor_csv(path: str | Path) -> AnchorSet:
    rows: list[tuple[int, float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["anchor_id", "lon", "lat"]:
            raise ValueError(f"bad anchor header in {path}: {header}")
        for row in reader:
            if not row:
                continue
            rows.append((int(row[0]), float(row[1]), float(row[2])))
    return AnchorSet.from_rows(rows)


def write_anchor_csv(path: str | Path, anchors: AnchorSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor_id", "lon", "lat"])
        for i in range(len(anchors)):
            writer.writerow([i, repr(float(anchors.lons[i])), repr(float(anchors.lats[i]))])


def read_trace_csv(path: str | Path) -> list[Trace]:
    """Read calibrated `object_id,anchor_id,timestamp` rows, file order kept."""
    order: list[str] = []
    points: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["object_id", "anchor_id", "timestamp"]:
            raise ValueError(f"bad calibrated trace header in {path}: {header}")
        for row in reader:
            if not row:
                continue
            oid = row[0]
            if oid not in points:
                order.append(oid)
                points[oid] = []
            points[oid].append((int(row[1]), int(row[2])))
    return [Trace(oid, points[oid]) for oid in order]


def write_trace_csv(path: str | Path, traces: Iterable[Trace]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object_id", "anchor_id", "timestamp"])
        for trace in traces:
            for anchor_id, t in trace.points:
                writer.writerow([trace.object_id, anchor_id, t])
