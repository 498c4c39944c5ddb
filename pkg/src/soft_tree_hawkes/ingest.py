"""Event catalog ingestion: CSV parsing, coordinate normalization and splits.

Raw catalogs carry a timestamp and a latitude/longitude pair. Normalization
maps time to months since an origin (30-day months) and the lon/lat box
affinely onto a target box, longitude to x and latitude to y.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import NamedTuple

import numpy as np

from .domain import EventSequence, SpatialRegion

log = logging.getLogger(__name__)

SECONDS_PER_MONTH = 3600.0 * 24 * 30


class ConfigError(ValueError):
    pass


class RawRecord(NamedTuple):
    timestamp: datetime
    lat: float
    lon: float


class RowError(NamedTuple):
    line: int
    message: str


@dataclass
class ParsedCatalog:
    records: list[RawRecord] = field(default_factory=list)
    errors: list[RowError] = field(default_factory=list)


def _parse_time(text: str, fmt: str | None) -> datetime:
    text = text.strip()
    ts = datetime.strptime(text, fmt) if fmt else datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_csv(path, columns: dict | None = None, time_format: str | None = None) -> ParsedCatalog:
    """Read ``time``/``lat``/``lon`` columns (names remapped by ``columns``) in file order.

    Malformed rows are reported with their 1-based line number rather than dropped silently.
    """
    cols = {"time": "time", "lat": "lat", "lon": "lon", **(columns or {})}
    out = ParsedCatalog()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            warnings.warn(f"{path}: empty catalog", stacklevel=2)
            return out
        missing = [c for c in (cols["time"], cols["lat"], cols["lon"]) if c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                ts = _parse_time(row[cols["time"]], time_format)
                lat = float(row[cols["lat"]])
                lon = float(row[cols["lon"]])
            except (TypeError, ValueError) as exc:
                out.errors.append(RowError(line, f"unparseable row: {exc}"))
                continue
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0) or math.isnan(lat + lon):
                out.errors.append(RowError(line, f"coordinates out of bounds: lat={lat}, lon={lon}"))
                continue
            out.records.append(RawRecord(ts, lat, lon))
    if not out.records and not out.errors:
        warnings.warn(f"{path}: empty catalog", stacklevel=2)
    return out


@dataclass(frozen=True)
class NormalizationSpec:
    """Time origin and scale plus the lon/lat box mapped onto ``target``.

    ``origin`` of ``None`` means "first event of the sequence being normalized".
    """

    lat_range: tuple[float, float]
    lon_range: tuple[float, float]
    target: SpatialRegion = SpatialRegion(-10.0, 10.0, -10.0, 10.0)
    origin: datetime | None = None
    seconds_per_unit: float = SECONDS_PER_MONTH

    def __post_init__(self):
        if not (self.lat_range[0] < self.lat_range[1] and self.lon_range[0] < self.lon_range[1]):
            raise ConfigError("lat/lon ranges must be increasing")
        if not self.seconds_per_unit > 0:
            raise ConfigError("time scale must be positive")

    def to_xy(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        r = self.target
        x = r.x_lo + (lon - self.lon_range[0]) / (self.lon_range[1] - self.lon_range[0]) * (r.x_hi - r.x_lo)
        y = r.y_lo + (lat - self.lat_range[0]) / (self.lat_range[1] - self.lat_range[0]) * (r.y_hi - r.y_lo)
        return np.stack([x, y], axis=-1)

    def to_latlon(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        r = self.target
        lon = self.lon_range[0] + (np.asarray(x) - r.x_lo) / (r.x_hi - r.x_lo) * (self.lon_range[1] - self.lon_range[0])
        lat = self.lat_range[0] + (np.asarray(y) - r.y_lo) / (r.y_hi - r.y_lo) * (self.lat_range[1] - self.lat_range[0])
        return lat, lon

    def to_time(self, ts: datetime, origin: datetime) -> float:
        return (ts - origin).total_seconds() / self.seconds_per_unit

    def to_datetime(self, t: float, origin: datetime) -> datetime:
        from datetime import timedelta
        return origin + timedelta(seconds=float(t) * self.seconds_per_unit)

    def in_box(self, lat: float, lon: float) -> bool:
        return self.lat_range[0] <= lat <= self.lat_range[1] and self.lon_range[0] <= lon <= self.lon_range[1]

    def to_dict(self, origin: datetime | None = None) -> dict:
        r = self.target
        o = origin or self.origin
        return {"lat_range": list(self.lat_range), "lon_range": list(self.lon_range),
                "target": [r.x_lo, r.x_hi, r.y_lo, r.y_hi],
                "origin": o.isoformat() if o else None, "seconds_per_unit": self.seconds_per_unit}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        origin = d.get("origin")
        return cls(tuple(d["lat_range"]), tuple(d["lon_range"]),
                   SpatialRegion(*d.get("target", (-10.0, 10.0, -10.0, 10.0))),
                   _parse_time(origin, None) if origin else None,
                   float(d.get("seconds_per_unit", SECONDS_PER_MONTH)))


class Normalized(NamedTuple):
    sequence: EventSequence
    origin: datetime
    excluded: int


def normalize(records: list[RawRecord], spec: NormalizationSpec) -> Normalized:
    """Map records into model units, dropping (and counting) those outside the box."""
    if not records:
        raise ValueError("no records to normalize")
    kept = [r for r in records if spec.in_box(r.lat, r.lon)]
    excluded = len(records) - len(kept)
    if excluded:
        log.info("excluded %d records outside the lat/lon box", excluded)
    if not kept:
        raise ValueError("every record lies outside the lat/lon box")
    origin = spec.origin or min(r.timestamp for r in kept)
    t = np.array([spec.to_time(r.timestamp, origin) for r in kept])
    xy = spec.to_xy([r.lat for r in kept], [r.lon for r in kept])
    seq = EventSequence.from_unsorted(t, xy, spec.target, t_start=min(0.0, float(t.min())))
    return Normalized(seq, origin, excluded)


def filter_years(records: list[RawRecord], first: int, last: int) -> list[RawRecord]:
    return [r for r in records if first <= r.timestamp.year <= last]


def split(seq: EventSequence, f_train: float = 0.7, f_val: float = 0.15):
    """Contiguous (train, val, test) by event count: floor, floor, remainder.

    Observation windows meet at the first event of the following split.
    """
    if not (0 < f_train < f_train + f_val < 1):
        raise ValueError("need 0 < f_train < f_train + f_val < 1")
    n = len(seq)
    i1 = int(math.floor(f_train * n))
    i2 = i1 + int(math.floor(f_val * n))
    b1 = float(seq.times[i1]) if i1 < n else seq.t_end
    b2 = float(seq.times[i2]) if i2 < n else seq.t_end
    return (seq.slice(0, i1, seq.t_start, b1),
            seq.slice(i1, i2, b1, b2),
            seq.slice(i2, n, b2, seq.t_end))


def split_sequences(seq: EventSequence, n_parts: int) -> list[EventSequence]:
    """Cut the observation window into equal time spans, each re-offset to start at 0."""
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    edges = seq.t_start + np.arange(n_parts + 1) * (seq.duration / n_parts)
    edges[-1] = seq.t_end
    idx = np.searchsorted(seq.times, edges, side="left")
    idx[-1] = len(seq)
    parts = []
    for p in range(n_parts):
        a, b = idx[p], idx[p + 1]
        parts.append(EventSequence(seq.times[a:b] - edges[p], seq.locs[a:b], seq.region,
                                   t_start=0.0, t_end=float(edges[p + 1] - edges[p])))
    return parts


def read_events(path, region: SpatialRegion) -> EventSequence:
    """Read the canonical ``t,x,y`` CSV; the observation window opens at min(0, first time)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "x", "y"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected columns t,x,y")
        for row in reader:
            try:
                rows.append((float(row["t"]), float(row["x"]), float(row["y"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{reader.line_num}: bad event row: {exc}") from exc
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    t0 = min(0.0, float(arr[:, 0].min())) if len(arr) else 0.0
    return EventSequence.from_unsorted(arr[:, 0], arr[:, 1:], region, t_start=t0)


def write_events(seq: EventSequence, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y"])
        for t, (x, y) in zip(seq.times, seq.locs):
            w.writerow([f"{t:.9f}", f"{x:.9f}", f"{y:.9f}"])
