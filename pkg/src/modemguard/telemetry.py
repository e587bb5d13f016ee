"""Domain types, CSV file I/O and geodesy for dual-modem CPE telemetry.

Every vessel CPE carries two modems. A modem is identified by a ``wan_id``
whose trailing integer gives its slot; slot ``n`` and slot ``n ^ 1`` are
siblings on the same CPE (``cpe03-wan0`` / ``cpe03-wan1``, or simply
``wan0`` / ``wan1``).
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError, SchemaError

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0

TELEMETRY_HEADER = (
    "wan_id", "carrier", "lte_rsrp", "lte_sinr", "lte_rsrq",
    "latency_ms", "time", "latitude", "longitude",
)
ACTIONS_HEADER = ("wan_id", "time", "source")
TOPOLOGY_HEADER = ("cell_id", "site_id", "latitude", "longitude", "azimuth_deg")

# Valid post-cleaning ranges, inclusive unless noted.
RSRP_RANGE = (-140.0, -44.0)
RSRQ_RANGE = (-24.0, 0.0)
SINR_RANGE = (-23.0, 40.0)
LATENCY_RANGE = (0.0, 10000.0)  # open at 0

_SLOT_RE = re.compile(r"^(.*?)(\d+)$")


@dataclass(frozen=True, slots=True)
class ModemSample:
    """One telemetry record for one modem."""

    wan_id: str
    carrier: str
    rsrp: float
    sinr: float
    rsrq: float
    latency: float
    time: int
    latitude: float
    longitude: float

    def to_dict(self) -> dict:
        return {
            "wan_id": self.wan_id,
            "carrier": self.carrier,
            "lte_rsrp": self.rsrp,
            "lte_sinr": self.sinr,
            "lte_rsrq": self.rsrq,
            "latency_ms": self.latency,
            "time": self.time,
            "latitude": self.latitude,
            "longitude": self.longitude,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModemSample":
        return cls(
            wan_id=str(data["wan_id"]),
            carrier=str(data["carrier"]),
            rsrp=float(data["lte_rsrp"]),
            sinr=float(data["lte_sinr"]),
            rsrq=float(data["lte_rsrq"]),
            latency=float(data["latency_ms"]),
            time=_parse_time(data["time"]),
            latitude=float(data["latitude"]),
            longitude=float(data["longitude"]),
        )

    def with_time(self, time: int) -> "ModemSample":
        return ModemSample(self.wan_id, self.carrier, self.rsrp, self.sinr, self.rsrq,
                           self.latency, time, self.latitude, self.longitude)


def in_valid_range(sample: ModemSample) -> str | None:
    """Return the first failing ``range:<feature>`` reason, or None if valid."""
    if not (RSRP_RANGE[0] <= sample.rsrp <= RSRP_RANGE[1]):
        return "range:rsrp"
    if not (SINR_RANGE[0] <= sample.sinr <= SINR_RANGE[1]):
        return "range:sinr"
    if not (RSRQ_RANGE[0] <= sample.rsrq <= RSRQ_RANGE[1]):
        return "range:rsrq"
    if not (LATENCY_RANGE[0] < sample.latency <= LATENCY_RANGE[1]):
        return "range:latency"
    return None


class ActionSource(str, Enum):
    MANUAL = "manual"
    AUTOMATED = "automated"


@dataclass(frozen=True, slots=True)
class ActionRecord:
    wan_id: str
    time: int
    source: ActionSource


@dataclass(frozen=True, slots=True)
class Cell:
    cell_id: str
    site_id: str
    latitude: float
    longitude: float
    azimuth: float


@dataclass(frozen=True)
class SiteTopology:
    cells: tuple[Cell, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))

    def __len__(self) -> int:
        return len(self.cells)

    @cached_property
    def site_coords(self) -> tuple[tuple[float, float], ...]:
        """Distinct cell locations (co-sited sectors collapse to one point)."""
        return tuple(dict.fromkeys((c.latitude, c.longitude) for c in self.cells))

    @property
    def coords(self) -> np.ndarray:
        """(n_cells, 2) array of latitude/longitude in degrees."""
        return np.array([(c.latitude, c.longitude) for c in self.cells], dtype=float)

    def bounding_box(self, margin_km: float = 0.0) -> tuple[float, float, float, float]:
        """(lat_min, lat_max, lon_min, lon_max) expanded by ``margin_km``."""
        lat = [c.latitude for c in self.cells]
        lon = [c.longitude for c in self.cells]
        dlat = math.degrees(margin_km / EARTH_RADIUS_KM)
        mid = math.radians(sum(lat) / len(lat))
        dlon = dlat / max(math.cos(mid), 1e-6)
        return min(lat) - dlat, max(lat) + dlat, min(lon) - dlon, max(lon) + dlon


def reference_topology() -> SiteTopology:
    """Nine macro cells on three tri-sector sites, spread over roughly 300 km^2 of sea."""
    sites = {
        "site-a": (54.000, 2.000),
        "site-b": (54.060, 2.110),
        "site-c": (53.950, 2.150),
    }
    cells = []
    for site_id, (lat, lon) in sites.items():
        for k, az in enumerate((0.0, 120.0, 240.0)):
            cells.append(Cell(f"{site_id}-s{k + 1}", site_id, lat, lon, az))
    return SiteTopology(tuple(cells))


@dataclass(frozen=True, slots=True)
class RowError:
    line: int
    message: str


@dataclass
class Dataset:
    """Telemetry partitioned by modem, plus the action log and site layout."""

    samples: dict[str, tuple[ModemSample, ...]] = field(default_factory=dict)
    actions: tuple[ActionRecord, ...] = ()
    topology: SiteTopology | None = None
    row_errors: tuple[RowError, ...] = ()

    @property
    def n_samples(self) -> int:
        return sum(len(p) for p in self.samples.values())

    def iter_time_ordered(self) -> list[ModemSample]:
        """All samples merged by (time, wan_id), the order a live collector would see."""
        merged = [s for part in self.samples.values() for s in part]
        merged.sort(key=lambda s: (s.time, s.wan_id))
        return merged


def modem_slot(wan_id: str) -> int:
    """Slot (0 or 1) of a modem within its CPE, from the parity of its trailing number."""
    m = _SLOT_RE.match(wan_id)
    if m is None:
        raise ValueError(f"wan_id {wan_id!r} has no trailing slot number")
    return int(m.group(2)) % 2


def sibling_of(wan_id: str) -> str:
    m = _SLOT_RE.match(wan_id)
    if m is None:
        raise ValueError(f"wan_id {wan_id!r} has no trailing slot number")
    digits = m.group(2)
    return f"{m.group(1)}{int(digits) ^ 1:0{len(digits)}d}"


def partition(samples: Iterable[ModemSample]) -> dict[str, tuple[ModemSample, ...]]:
    """Group by wan_id, sort by time, keep the last occurrence of duplicate timestamps."""
    by_key: dict[str, dict[int, ModemSample]] = {}
    for s in samples:
        by_key.setdefault(s.wan_id, {})[s.time] = s
    return {w: tuple(rows[t] for t in sorted(rows)) for w, rows in sorted(by_key.items())}


# --------------------------------------------------------------------------- geodesy


def _check_coord(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise DomainError(f"coordinate out of range: ({lat}, {lon})")


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points given in degrees."""
    _check_coord(*a)
    _check_coord(*b)
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine; no range checking."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def nearest_site_km(p: tuple[float, float], topology: SiteTopology) -> float:
    if topology is None or len(topology) == 0:
        raise ConfigError("topology has no cells", field="topology")
    return min(haversine_km(p, site) for site in topology.site_coords)


def nearest_site_km_array(lat, lon, topology: SiteTopology) -> np.ndarray:
    if topology is None or len(topology) == 0:
        raise ConfigError("topology has no cells", field="topology")
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    coords = np.array(topology.site_coords, dtype=float)
    d = haversine_km_array(lat[:, None], lon[:, None], coords[None, :, 0], coords[None, :, 1])
    return d.min(axis=1)


# --------------------------------------------------------------------------- CSV I/O


def _parse_time(value) -> int:
    if isinstance(value, int):
        t = value
    else:
        text = str(value).strip()
        if not re.fullmatch(r"[+-]?\d+", text):
            raise ValueError(f"time {value!r} is not an integer epoch")
        t = int(text)
    if t <= 0:
        raise ValueError(f"time {t} must be positive")
    return t


def _parse_finite(value: str, name: str) -> float:
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"{name} is not finite")
    return x


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_header(reader, expected: Sequence[str], path) -> None:
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file, expected header {','.join(expected)}") from None
    if tuple(h.strip() for h in header) != tuple(expected):
        raise SchemaError(f"{path}: header {','.join(header)!r} != {','.join(expected)!r}")


def load_telemetry(path: str | Path) -> Dataset:
    """Parse a telemetry CSV into per-modem partitions.

    Unparsable rows are skipped and reported in ``Dataset.row_errors`` with
    their 1-based line number (the header is line 1).
    """
    rows: list[ModemSample] = []
    errors: list[RowError] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _read_header(reader, TELEMETRY_HEADER, path)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(TELEMETRY_HEADER):
                    raise ValueError(f"expected {len(TELEMETRY_HEADER)} fields, got {len(row)}")
                wan_id, carrier = row[0].strip(), row[1].strip()
                if not wan_id:
                    raise ValueError("empty wan_id")
                rows.append(ModemSample(
                    wan_id=wan_id,
                    carrier=carrier,
                    rsrp=_parse_finite(row[2], "lte_rsrp"),
                    sinr=_parse_finite(row[3], "lte_sinr"),
                    rsrq=_parse_finite(row[4], "lte_rsrq"),
                    latency=_parse_finite(row[5], "latency_ms"),
                    time=_parse_time(row[6]),
                    latitude=_parse_finite(row[7], "latitude"),
                    longitude=_parse_finite(row[8], "longitude"),
                ))
            except ValueError as exc:
                errors.append(RowError(line_no, str(exc)))
    if errors:
        logger.warning("%s: skipped %d unparsable rows (first at line %d)", path, len(errors), errors[0].line)
    return Dataset(samples=partition(rows), row_errors=tuple(errors))


def save_telemetry(path: str | Path, samples: Iterable[ModemSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TELEMETRY_HEADER)
        for s in samples:
            w.writerow([s.wan_id, s.carrier, _fmt(s.rsrp), _fmt(s.sinr), _fmt(s.rsrq),
                        _fmt(s.latency), s.time, _fmt(s.latitude), _fmt(s.longitude)])


def load_actions(path: str | Path) -> tuple[ActionRecord, ...]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _read_header(reader, ACTIONS_HEADER, path)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(ActionRecord(row[0].strip(), _parse_time(row[1]), ActionSource(row[2].strip())))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{line_no}: bad action row: {exc}") from None
    out.sort(key=lambda a: (a.time, a.wan_id))
    return tuple(out)


def save_actions(path: str | Path, actions: Iterable[ActionRecord], append: bool = False) -> None:
    p = Path(path)
    write_header = not (append and p.exists() and p.stat().st_size > 0)
    with open(p, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if write_header:
            w.writerow(ACTIONS_HEADER)
        for a in actions:
            w.writerow([a.wan_id, a.time, a.source.value])


def load_topology(path: str | Path) -> SiteTopology:
    cells = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _read_header(reader, TOPOLOGY_HEADER, path)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                cells.append(Cell(row[0].strip(), row[1].strip(), float(row[2]), float(row[3]), float(row[4])))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{line_no}: bad topology row: {exc}") from None
    return SiteTopology(tuple(cells))


def save_topology(path: str | Path, topology: SiteTopology) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOPOLOGY_HEADER)
        for c in topology.cells:
            w.writerow([c.cell_id, c.site_id, _fmt(c.latitude), _fmt(c.longitude), _fmt(c.azimuth)])
