"""Trajectory and side-data ingestion, cleaning, and dataset splitting.

File formats
------------
Trajectory JSONL: ``{"id": ..., "domain": ..., "points": [{"lat":, "lon":, "t":}, ...]}``
per line.  Trajectory CSV: header ``id,domain,lat,lon,t``, rows grouped by id.
POI CSV ``lat,lon,category``; weather CSV ``lat,lon,start_t,end_t,rain,snow,hail``
(blank lat/lon applies to the whole grid); events CSV ``lat,lon,start_t,end_t,kind``;
holidays: one ISO date per line.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadRecord, EmptyFile, ParseError, SchemaError, TooFew, ValidationError
from .geo import GpsPoint

log = logging.getLogger(__name__)

GAP_SECONDS = 300


@dataclass
class Trajectory:
    id: str
    domain: str
    points: list[GpsPoint]

    @property
    def start_time(self) -> float:
        return self.points[0].t

    @property
    def duration(self) -> float:
        return self.points[-1].t - self.points[0].t


@dataclass(frozen=True)
class PoiRecord:
    lat: float
    lon: float
    category: str = ""


@dataclass(frozen=True)
class WeatherRecord:
    lat: float | None
    lon: float | None
    start_t: float
    end_t: float
    rain: float = 0.0
    snow: float = 0.0
    hail: float = 0.0

    def __post_init__(self):
        if self.end_t < self.start_t:
            raise BadRecord(f"weather record ends before it starts ({self.end_t} < {self.start_t})")
        for name in ("rain", "snow", "hail"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SchemaError(f"{name} level {v} outside [0, 1]")


@dataclass(frozen=True)
class EventRecord:
    lat: float
    lon: float
    start_t: float
    end_t: float
    kind: str = ""

    def __post_init__(self):
        if self.end_t < self.start_t:
            raise BadRecord(f"event record ends before it starts ({self.end_t} < {self.start_t})")


@dataclass
class SideData:
    pois: list[PoiRecord] = field(default_factory=list)
    weather: list[WeatherRecord] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    holidays: set[dt.date] = field(default_factory=set)


@dataclass
class CleaningReport:
    duplicates: int = 0
    short: int = 0
    splits: int = 0


def clean_points(points: list[GpsPoint], gap: float = GAP_SECONDS, report: CleaningReport | None = None):
    """Sort by time, drop repeated timestamps, split at gaps; returns point runs with >= 2 points."""
    report = report if report is not None else CleaningReport()
    pts = sorted(points, key=lambda p: p.t)
    kept: list[GpsPoint] = []
    for p in pts:
        if kept and p.t == kept[-1].t:
            report.duplicates += 1
            continue
        kept.append(p)
    runs, cur = [], []
    for p in kept:
        if cur and p.t - cur[-1].t > gap:
            runs.append(cur)
            report.splits += 1
            cur = []
        cur.append(p)
    if cur:
        runs.append(cur)
    out = []
    for run in runs:
        if len(run) < 2:
            report.short += 1
        else:
            out.append(run)
    return out


def _float(value, line, name):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"bad {name} value {value!r}", line) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite {name}", line)
    return x


def _point(lat, lon, t, line):
    try:
        return GpsPoint(_float(lat, line, "lat"), _float(lon, line, "lon"), _float(t, line, "t"))
    except ValidationError as exc:
        raise ParseError(str(exc), line) from None


def load_trajectories(path, format: str | None = None, gap: float = GAP_SECONDS,
                      report: CleaningReport | None = None) -> list[Trajectory]:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt not in ("jsonl", "csv"):
        raise ValidationError(f"unknown trajectory format {fmt!r}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(f"{path} is empty")
    raw: dict[str, tuple[str, list[GpsPoint]]] = {}
    if fmt == "jsonl":
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tid, dom, pts = str(obj["id"]), str(obj["domain"]), obj["points"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed trajectory record ({exc})", lineno) from None
            try:
                points = [_point(p["lat"], p["lon"], p["t"], lineno) for p in pts]
            except (KeyError, TypeError):
                raise ParseError("point missing lat/lon/t", lineno) from None
            raw.setdefault(tid, (dom, []))[1].extend(points)
    else:
        reader = csv.DictReader(text.splitlines())
        missing = {"id", "domain", "lat", "lon", "t"} - set(reader.fieldnames or [])
        if missing:
            raise SchemaError(f"trajectory CSV missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            if None in row.values():
                raise ParseError("too few fields", lineno)
            raw.setdefault(row["id"], (row["domain"], []))[1].append(
                _point(row["lat"], row["lon"], row["t"], lineno))
    report = report if report is not None else CleaningReport()
    out = []
    for tid, (dom, pts) in raw.items():
        runs = clean_points(pts, gap, report)
        for k, run in enumerate(runs):
            out.append(Trajectory(tid if len(runs) == 1 else f"{tid}#{k}", dom, run))
    log.info("loaded %d trajectories (%d duplicate points, %d gap splits, %d short runs dropped)",
             len(out), report.duplicates, report.splits, report.short)
    return out


def save_trajectories(path, trajectories: list[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trajectories:
            pts = [{"lat": p.lat, "lon": p.lon, "t": p.t} for p in tr.points]
            fh.write(json.dumps({"id": tr.id, "domain": tr.domain, "points": pts}) + "\n")


def _read_csv(path, required):
    if path is None or not Path(path).exists():
        return []
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    reader = csv.DictReader(text.splitlines())
    missing = set(required) - set(reader.fieldnames or [])
    if missing:
        raise SchemaError(f"{path}: missing columns {sorted(missing)}")
    return [(lineno, row) for lineno, row in enumerate(reader, 2)]


def _opt_float(value, line, name):
    if value is None or str(value).strip() == "":
        return None
    return _float(value, line, name)


def load_side_data(poi=None, weather=None, events=None, holidays=None) -> SideData:
    side = SideData()
    for line, row in _read_csv(poi, ("lat", "lon", "category")):
        side.pois.append(PoiRecord(_float(row["lat"], line, "lat"), _float(row["lon"], line, "lon"),
                                   row["category"] or ""))
    for line, row in _read_csv(weather, ("lat", "lon", "start_t", "end_t", "rain", "snow", "hail")):
        try:
            side.weather.append(WeatherRecord(
                _opt_float(row["lat"], line, "lat"), _opt_float(row["lon"], line, "lon"),
                _float(row["start_t"], line, "start_t"), _float(row["end_t"], line, "end_t"),
                _float(row["rain"], line, "rain"), _float(row["snow"], line, "snow"),
                _float(row["hail"], line, "hail")))
        except SchemaError as exc:
            raise SchemaError(f"{weather} line {line}: {exc}") from None
    for line, row in _read_csv(events, ("lat", "lon", "start_t", "end_t", "kind")):
        side.events.append(EventRecord(
            _float(row["lat"], line, "lat"), _float(row["lon"], line, "lon"),
            _float(row["start_t"], line, "start_t"), _float(row["end_t"], line, "end_t"), row["kind"] or ""))
    if holidays is not None and Path(holidays).exists():
        for lineno, line in enumerate(Path(holidays).read_text(encoding="utf-8").splitlines(), 1):
            if line.strip():
                try:
                    side.holidays.add(dt.date.fromisoformat(line.strip()))
                except ValueError:
                    raise ParseError(f"bad ISO date {line.strip()!r}", lineno) from None
    return side


def save_side_data(directory, side: SideData) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / f"{k}.csv" for k in ("poi", "weather", "events")}
    paths["holidays"] = directory / "holidays.txt"
    with open(paths["poi"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "category"])
        w.writerows([[p.lat, p.lon, p.category] for p in side.pois])
    with open(paths["weather"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "start_t", "end_t", "rain", "snow", "hail"])
        for r in side.weather:
            w.writerow(["" if r.lat is None else r.lat, "" if r.lon is None else r.lon,
                        r.start_t, r.end_t, r.rain, r.snow, r.hail])
    with open(paths["events"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "start_t", "end_t", "kind"])
        w.writerows([[e.lat, e.lon, e.start_t, e.end_t, e.kind] for e in side.events])
    paths["holidays"].write_text("".join(f"{d.isoformat()}\n" for d in sorted(side.holidays)), encoding="utf-8")
    return paths


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def select(self, trajectories, part: str) -> list[Trajectory]:
        ids = set(getattr(self, part))
        return [t for t in trajectories if t.id in ids]


def split_dataset(trajectories, seed: int = 0, fractions=(0.7, 0.1, 0.2)) -> DatasetSplit:
    """Seeded 70/10/20 split by trajectory id."""
    ids = sorted({t.id for t in trajectories})
    n = len(ids)
    if n < 10:
        raise TooFew(f"need at least 10 trajectories to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return DatasetSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:n_train + n_val]),
                        tuple(shuffled[n_train + n_val:]), seed)
