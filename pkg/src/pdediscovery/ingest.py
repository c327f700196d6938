"""Dataset CSV I/O, station observations and space-time gridding.

Station documents use this fixture schema (real-API adapters map onto it)::

    {"stations": [
        {"id": "52350", "latitude": 55.38, "longitude": 12.82,
         "observations": [{"time": 1467331200, "value": 14.2}, ...]},
        ...]}

``time`` is in seconds since the epoch, ``value`` in physical units.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import re
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .dataset import Dataset
from .delaunay import TriangulationError, delaunay, locate

log = logging.getLogger(__name__)

CACHE_ENV = "PDEDISCOVERY_CACHE"


# ---------------------------------------------------------------------------
# CSV


class CsvFormatError(ValueError):
    pass


def write_dataset_csv(data: Dataset, path) -> None:
    """Header ``t,x1..xN,u1..uM``; values at 17 significant digits."""
    header = ["t"] + [f"x{i + 1}" for i in range(data.n_space)] + [f"u{j + 1}" for j in range(data.n_out)]
    block = np.column_stack([data.t, data.x, data.u]) if len(data) else np.zeros((0, len(header)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in block:
            w.writerow([f"{v:.17g}" for v in row])


_HEADER = re.compile(r"^(t)$|^x(\d+)$|^u(\d+)$")


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        n_space = sum(1 for h in header if re.fullmatch(r"x\d+", h))
        n_out = sum(1 for h in header if re.fullmatch(r"u\d+", h))
        expected = ["t"] + [f"x{i + 1}" for i in range(n_space)] + [f"u{j + 1}" for j in range(n_out)]
        if header != expected or n_out < 1:
            raise CsvFormatError(f"{path}: header must be t,x1..xN,u1..uM, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise CsvFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    block = np.array(rows, dtype=float).reshape(-1, len(header))
    return Dataset(block[:, 0], block[:, 1:1 + n_space], block[:, 1 + n_space:])


# ---------------------------------------------------------------------------
# stations


@dataclass
class StationRecord:
    station_id: str
    latitude: float
    longitude: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.latitude) and math.isfinite(self.longitude)):
            raise ValueError(f"station {self.station_id}: non-finite coordinates")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError(f"station {self.station_id}: timestamps must increase strictly")

    @property
    def observations(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))


@dataclass
class ParseReport:
    warnings: list[str] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    n_reordered: int = 0
    n_duplicates: int = 0


def parse_station_json(document, report: ParseReport | None = None) -> list[StationRecord]:
    """Validate a fixture document (dict or JSON text) into station records.

    Out-of-order observations are sorted and duplicated timestamps keep the
    last value, both with a warning in ``report``.  A station with missing
    fields is recorded in ``report.errors`` and skipped.
    """
    report = report if report is not None else ParseReport()
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    records = []
    for k, st in enumerate(doc.get("stations", [])):
        sid = str(st.get("id", f"#{k}"))
        try:
            lat = float(st["latitude"])
            lon = float(st["longitude"])
            obs = [(float(o["time"]), float(o["value"])) for o in st["observations"]]
        except (KeyError, TypeError, ValueError) as exc:
            report.errors[sid] = f"missing or invalid field: {exc}"
            continue
        times = np.array([o[0] for o in obs], dtype=float)
        vals = np.array([o[1] for o in obs], dtype=float)
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(vals))):
            report.errors[sid] = "non-finite observation"
            continue
        if np.any(np.diff(times) < 0):
            report.n_reordered += 1
            report.warnings.append(f"{sid}: observations out of order, sorted")
        order = np.argsort(times, kind="stable")
        times, vals = times[order], vals[order]
        # keep the last of equal timestamps
        keep = np.append(times[1:] != times[:-1], True)
        n_dup = int((~keep).sum())
        if n_dup:
            report.n_duplicates += n_dup
            report.warnings.append(f"{sid}: {n_dup} duplicated timestamps, kept last")
        try:
            records.append(StationRecord(sid, lat, lon, times[keep], vals[keep]))
        except ValueError as exc:
            report.errors[sid] = str(exc)
    for w in report.warnings:
        log.warning(w)
    return records


def from_smhi_document(doc: dict) -> dict:
    """Map one SMHI per-station observation document to a fixture station entry."""
    pos = doc["position"][-1]
    return {
        "id": str(doc["station"]["key"]),
        "latitude": pos["latitude"],
        "longitude": pos["longitude"],
        "observations": [{"time": v["date"] / 1000.0, "value": float(v["value"])} for v in doc["value"]],
    }


# ---------------------------------------------------------------------------
# gridding


@dataclass(frozen=True)
class GridSpec:
    nt: int
    n_axis1: int
    n_axis2: int
    bbox: tuple[float, float, float, float] | None = None  # (lat_min, lat_max, lon_min, lon_max)
    window: tuple[float, float] | None = None

    def __post_init__(self):
        if min(self.nt, self.n_axis1, self.n_axis2) < 2:
            raise ValueError("every grid axis needs at least two points")


def interpolate_to_grid(records: list[StationRecord], grid: GridSpec) -> tuple[Dataset, np.ndarray]:
    """Linear-in-time, then piecewise-linear-in-space values on a regular grid.

    For every stamp, the stations whose series cover it are triangulated
    (Delaunay on (latitude, longitude)) and grid nodes inside the hull get
    barycentric interpolants.  Returns the dataset of valid nodes, rows
    ordered (t, axis1, axis2), and the validity mask of shape
    ``(nt, n_axis1, n_axis2)``.
    """
    if len(records) < 3:
        raise TriangulationError("need at least three stations")
    coords = np.array([[r.latitude, r.longitude] for r in records])
    if grid.bbox is None:
        lat0, lat1 = coords[:, 0].min(), coords[:, 0].max()
        lon0, lon1 = coords[:, 1].min(), coords[:, 1].max()
    else:
        lat0, lat1, lon0, lon1 = grid.bbox
    if grid.window is None:
        t0 = min(float(r.times[0]) for r in records)
        t1 = max(float(r.times[-1]) for r in records)
    else:
        t0, t1 = grid.window
    stamps = np.linspace(t0, t1, grid.nt)
    lat = np.linspace(lat0, lat1, grid.n_axis1)
    lon = np.linspace(lon0, lon1, grid.n_axis2)
    LA, LO = np.meshgrid(lat, lon, indexing="ij")
    nodes = np.column_stack([LA.ravel(), LO.ravel()])

    # station values at every stamp, NaN outside each station's span
    values = np.full((grid.nt, len(records)), np.nan)
    for j, r in enumerate(records):
        inside = (stamps >= r.times[0]) & (stamps <= r.times[-1])
        values[inside, j] = np.interp(stamps[inside], r.times, r.values)

    mask = np.zeros((grid.nt, nodes.shape[0]), dtype=bool)
    field = np.full((grid.nt, nodes.shape[0]), np.nan)
    cache: dict[bytes, tuple] = {}
    for i in range(grid.nt):
        active = np.isfinite(values[i])
        key = active.tobytes()
        if key not in cache:
            sel = np.nonzero(active)[0]
            try:
                tris = delaunay(coords[sel])
            except TriangulationError:
                cache[key] = (sel, None, None, None)
            else:
                loc, w = locate(coords[sel], tris, nodes)
                cache[key] = (sel, tris, loc, w)
        sel, tris, loc, w = cache[key]
        if tris is None:
            continue
        ok = loc >= 0
        v = values[i, sel]
        field[i, ok] = np.sum(v[tris[loc[ok]]] * w[ok], axis=1)
        mask[i, ok] = True
    if not mask.any() and all(c[1] is None for c in cache.values()):
        raise TriangulationError("stations are collinear at every stamp")
    T = np.repeat(stamps, nodes.shape[0])
    X = np.tile(nodes, (grid.nt, 1))
    flat = mask.ravel()
    data = Dataset(T[flat], X[flat], field.ravel()[flat][:, None], ("lat", "lon"), ("T",))
    return data, mask.reshape(grid.nt, grid.n_axis1, grid.n_axis2)


# ---------------------------------------------------------------------------
# fetching

Transport = Callable[[str], bytes]


def _urllib_transport(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=30) as resp:  # noqa: S310
        return resp.read()


@dataclass
class FetchResult:
    documents: dict[str, bytes]
    errors: dict[str, str]
    network_calls: int = 0
    cache_hits: int = 0


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "pdediscovery"))


def station_url(base_url: str, station_id: str, period: str) -> str:
    return f"{base_url.rstrip('/')}/station/{station_id}/period/{period}/data.json"


def fetch_observations(base_url: str, station_ids: Iterable[str], period: str, cache_dir=None,
                       transport: Transport | None = None) -> FetchResult:
    """Fetch raw station documents, serving repeats from a content-addressed cache.

    Objects are stored under ``objects/<sha256 of content>`` and looked up
    through ``index/<sha256 of url>``.  A failed request is reported per
    station; the other stations are still returned.
    """
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    (cache / "objects").mkdir(parents=True, exist_ok=True)
    (cache / "index").mkdir(parents=True, exist_ok=True)
    transport = transport or _urllib_transport
    result = FetchResult({}, {})
    for sid in station_ids:
        url = station_url(base_url, sid, period)
        key = hashlib.sha256(url.encode()).hexdigest()
        ref = cache / "index" / key
        if ref.exists():
            obj = cache / "objects" / ref.read_text().strip()
            if obj.exists():
                result.documents[sid] = obj.read_bytes()
                result.cache_hits += 1
                continue
        try:
            result.network_calls += 1
            body = transport(url)
        except Exception as exc:  # noqa: BLE001 - any transport failure is per-station
            result.errors[sid] = f"{type(exc).__name__}: {exc}"
            continue
        digest = hashlib.sha256(body).hexdigest()
        obj = cache / "objects" / digest
        if not obj.exists():
            tmp = obj.with_suffix(".tmp")
            tmp.write_bytes(body)
            tmp.replace(obj)
        ref.write_text(digest)
        result.documents[sid] = body
    return result
