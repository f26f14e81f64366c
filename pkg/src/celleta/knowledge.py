"""Cellular spatial-temporal knowledge grids and per-cell feature vectors.

GPS knowledge is pooled over days per time-of-day interval and stored densely
as ``(I, J, T, 8)`` arrays, NaN marking a missing (cell, interval, direction)
entry.  Weather and events stay on calendar time and are stored sparsely,
keyed by the absolute interval counter from :func:`geo.absolute_interval`.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import container
from .data import EventRecord, PoiRecord, Trajectory, WeatherRecord
from .errors import BadRecord, BadWindow, EmptyTrajectory, InsufficientData, OutOfBounds, ShapeMismatch
from .geo import (
    CellIndex, CompassDirection, GpsPoint, GridSpec, absolute_interval, cell_of,
    haversine_distance, subdivide_segment, time_interval_of,
)
from .neural import DenseNet, Layer, TrainConfig, fit, forward

log = logging.getLogger(__name__)

N_DIR = 8
SPEED_MIN = 0.1   # m/s
SPEED_MAX = 60.0  # m/s; also the speed normaliser
EVENT_CAP = 10
DEFAULT_WINDOWS = (2, 4, 8)

FEATURE_NAMES = (
    ["weekend", "holiday", "poi", "rain", "snow", "hail", "events"]
    + [f"{d.name}_{k}" for d in CompassDirection for k in ("speed", "present")]
    + ["interval_sin", "interval_cos"]
)
CELL_VECTOR_WIDTH = len(FEATURE_NAMES)


@dataclass(frozen=True)
class SpeedSample:
    cell: CellIndex
    interval: int
    dir: CompassDirection
    speed: float
    traversal_time: float
    chord_len: float
    t: float = 0.0   # epoch seconds at sub-segment start
    pair: int = 0    # index of the parent point pair within its trajectory


@dataclass(frozen=True)
class Crossing:
    """One contiguous stay in a cell along a trajectory."""
    cell: CellIndex
    t: float
    chord_len: float
    seconds: float


_SAMPLE_CACHE: OrderedDict = OrderedDict()
_SAMPLE_CACHE_SIZE = 20_000


def extract_speed_samples(traj: Trajectory, g: GridSpec) -> list[SpeedSample]:
    """Per-cell speed samples of one trajectory.

    Subdivision dominates the pipeline's run time and the same trajectory is
    revisited by several stages, so results are memoised per trajectory object
    (identity-checked; trajectories are treated as immutable).
    """
    key = (id(traj), g)
    hit = _SAMPLE_CACHE.get(key)
    if hit is not None and hit[0] is traj and hit[1] == len(traj.points):
        _SAMPLE_CACHE.move_to_end(key)
        return list(hit[2])
    out = _extract_speed_samples(traj, g)
    _SAMPLE_CACHE[key] = (traj, len(traj.points), tuple(out))
    if len(_SAMPLE_CACHE) > _SAMPLE_CACHE_SIZE:
        _SAMPLE_CACHE.popitem(last=False)
    return out


def _extract_speed_samples(traj: Trajectory, g: GridSpec) -> list[SpeedSample]:
    pts = traj.points
    if len(pts) < 2:
        raise EmptyTrajectory(f"trajectory {traj.id} has fewer than 2 points")
    out = []
    for k, (a, b) in enumerate(zip(pts, pts[1:])):
        dt_ = b.t - a.t
        if dt_ <= 0:
            continue
        d = haversine_distance(a, b)
        speed = d / dt_
        if not SPEED_MIN <= speed <= SPEED_MAX:
            continue
        try:
            subs = subdivide_segment(a, b, g)
        except OutOfBounds:
            continue
        lengths = [s.length for s in subs]
        total = sum(lengths)
        t = a.t
        for s, ln in zip(subs, lengths):
            tt = dt_ * ln / total
            if tt > 0:
                out.append(SpeedSample(s.cell, time_interval_of(t, g), s.bearing_dir, speed, tt, ln, t, k))
            t += tt
    return out


def merge_crossings(samples: list[SpeedSample]) -> list[Crossing]:
    """Fuse consecutive samples in the same cell from adjacent point pairs."""
    out: list[Crossing] = []
    prev = None
    for s in samples:
        if prev is not None and s.cell == out[-1].cell and s.pair - prev.pair <= 1:
            c = out[-1]
            out[-1] = Crossing(c.cell, c.t, c.chord_len + s.chord_len, c.seconds + s.traversal_time)
        else:
            out.append(Crossing(s.cell, s.t, s.chord_len, s.traversal_time))
        prev = s
    return out


def extract_crossings(traj: Trajectory, g: GridSpec) -> list[Crossing]:
    return merge_crossings(extract_speed_samples(traj, g))


class GpsKnowledgeGrid:
    """Per (cell, interval, direction) mean speed with sample counts.

    ``window`` is set for circular-window averages (the averaged grids).
    """

    def __init__(self, grid: GridSpec, speed, count, interpolated=None, window: int | None = None):
        shape = (grid.rows, grid.cols, grid.intervals, N_DIR)
        speed = np.asarray(speed, dtype=float)
        count = np.asarray(count, dtype=np.int64)
        if speed.shape != shape or count.shape != shape:
            raise ShapeMismatch(f"knowledge arrays must have shape {shape}")
        self.grid = grid
        self.speed = speed
        self.count = count
        self.interpolated = np.zeros(shape, bool) if interpolated is None else np.asarray(interpolated, bool)
        self.window = window

    @classmethod
    def empty(cls, grid: GridSpec, window=None) -> "GpsKnowledgeGrid":
        shape = (grid.rows, grid.cols, grid.intervals, N_DIR)
        return cls(grid, np.full(shape, np.nan), np.zeros(shape, np.int64), window=window)

    def copy(self) -> "GpsKnowledgeGrid":
        return GpsKnowledgeGrid(self.grid, self.speed.copy(), self.count.copy(),
                                self.interpolated.copy(), self.window)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.speed)

    @property
    def observed(self) -> np.ndarray:
        return self.count > 0

    def lookup(self, cell: CellIndex, interval: int, direction) -> float | None:
        v = self.speed[cell.h - 1, cell.w - 1, interval % self.grid.intervals, int(direction)]
        return None if np.isnan(v) else float(v)

    def profile(self, cell: CellIndex, interval: int) -> np.ndarray:
        return self.speed[cell.h - 1, cell.w - 1, interval % self.grid.intervals].copy()

    def to_record(self, prefix: str):
        meta = {"window": self.window}
        arrays = {f"{prefix}.speed": self.speed, f"{prefix}.count": self.count,
                  f"{prefix}.interpolated": self.interpolated}
        return meta, arrays

    @classmethod
    def from_record(cls, grid, meta, arrays, prefix):
        return cls(grid, arrays[f"{prefix}.speed"], arrays[f"{prefix}.count"],
                   arrays[f"{prefix}.interpolated"], meta["window"])


AveragedGrid = GpsKnowledgeGrid


def build_gps_knowledge(samples: list[SpeedSample], g: GridSpec) -> GpsKnowledgeGrid:
    shape = (g.rows, g.cols, g.intervals, N_DIR)
    sums = np.zeros(shape)
    counts = np.zeros(shape, np.int64)
    if samples:
        idx = np.array([(s.cell.h - 1, s.cell.w - 1, s.interval, int(s.dir)) for s in samples]).T
        if (idx[0] >= g.rows).any() or (idx[1] >= g.cols).any() or (idx[:2] < 0).any():
            raise OutOfBounds("sample cell outside grid")
        np.add.at(sums, tuple(idx), [s.speed for s in samples])
        np.add.at(counts, tuple(idx), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        speed = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return GpsKnowledgeGrid(g, speed, counts)


def build_averaged_grid(gps: GpsKnowledgeGrid, T_a: int) -> GpsKnowledgeGrid:
    """Count-weighted mean over the circular window t-T_a..t+T_a, excluding t itself."""
    T = gps.grid.intervals
    if not 2 <= T_a <= T / 2:
        raise BadWindow(f"window T_a={T_a} must satisfy 2 <= T_a <= T/2 = {T / 2}")
    obs = gps.observed
    c = np.where(obs, gps.count, 0)
    s = np.where(obs, np.nan_to_num(gps.speed) * gps.count, 0.0)
    offsets = sorted({k % T for k in range(-T_a, T_a + 1)} - {0})
    tot_s = np.zeros_like(s)
    tot_c = np.zeros_like(c)
    for k in offsets:
        # roll by -k: value at t comes from t+k
        tot_s += np.roll(s, -k, axis=2)
        tot_c += np.roll(c, -k, axis=2)
    speed = np.where(tot_c > 0, tot_s / np.maximum(tot_c, 1), np.nan)
    return GpsKnowledgeGrid(gps.grid, speed, tot_c, window=T_a)


def build_star(gps: GpsKnowledgeGrid, windows=DEFAULT_WINDOWS) -> list[GpsKnowledgeGrid]:
    return [build_averaged_grid(gps, w) for w in windows if w <= gps.grid.intervals / 2]


# -- inner-domain interpolation model ----------------------------------------

@dataclass
class InterpolatorModel:
    net: DenseNet
    windows: tuple[int, ...]

    @property
    def input_width(self) -> int:
        return 2 * N_DIR * (1 + len(self.windows))


def _profile_block(grid: GpsKnowledgeGrid, keys, observed_only: bool):
    h, w, t = keys.T
    s = grid.speed[h, w, t]
    present = ~np.isnan(s)
    if observed_only:
        present &= grid.count[h, w, t] > 0
    return np.where(present, s / SPEED_MAX, 0.0), present.astype(float)


def interpolator_inputs(gps: GpsKnowledgeGrid, star, keys) -> np.ndarray:
    """Rows ``observed speeds, flags, then (speeds, flags) per averaged grid`` for (h, w, t) keys."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    blocks = list(_profile_block(gps, keys, observed_only=True))
    for grid in star:
        blocks.extend(_profile_block(grid, keys, observed_only=False))
    return np.concatenate(blocks, axis=1)


def _check_star(gps, star, windows=None):
    for grid in star:
        if grid.speed.shape != gps.speed.shape:
            raise ShapeMismatch("averaged grid shape differs from GPS grid")
    if windows is not None and tuple(g.window for g in star) != tuple(windows):
        raise ShapeMismatch(f"averaged windows {[g.window for g in star]} != model windows {list(windows)}")


def train_interpolator(gps: GpsKnowledgeGrid, star: list[GpsKnowledgeGrid], cfg: TrainConfig | None = None,
                       seed: int = 0) -> InterpolatorModel:
    """Fit the one-layer interpolator with leave-one-direction-out targets.

    Each observed (cell, interval, direction) becomes a row whose own slot is
    blanked in the input and is the only output that enters the loss.
    """
    if not star:
        raise InsufficientData("at least one averaged grid is required")
    _check_star(gps, star)
    cfg = cfg or TrainConfig(epochs=60, batch_size=256, lr=0.01, dropout=0.0, seed=seed, patience=8)
    obs = gps.observed
    entries = np.argwhere(obs)  # (n, 4) h, w, t, d
    if len(entries) < 8:
        raise InsufficientData(f"only {len(entries)} observed entries to learn from")
    X = interpolator_inputs(gps, star, entries[:, :3])
    d = entries[:, 3]
    rows = np.arange(len(entries))
    X[rows, d] = 0.0
    X[rows, N_DIR + d] = 0.0
    Y = np.zeros((len(entries), N_DIR))
    Y[rows, d] = gps.speed[tuple(entries.T)] / SPEED_MAX
    M = np.zeros_like(Y)
    M[rows, d] = 1.0
    width = X.shape[1]
    n_params = width * N_DIR + N_DIR
    if len(entries) < 10 * n_params:
        log.warning("interpolator: %d rows for %d parameters", len(entries), n_params)
    rng = np.random.default_rng(cfg.seed)
    net = DenseNet([Layer(rng.uniform(-0.01, 0.01, (width, N_DIR)), np.zeros(N_DIR), "identity")])
    fit(net, X, Y, cfg, mask=M)
    return InterpolatorModel(net, tuple(g.window for g in star))


def interpolator_loss(mi: InterpolatorModel, gps, star) -> float:
    """Masked squared error of ``mi`` on the leave-one-out rows (normalised speeds)."""
    entries = np.argwhere(gps.observed)
    X = interpolator_inputs(gps, star, entries[:, :3])
    d = entries[:, 3]
    rows = np.arange(len(entries))
    X[rows, d] = 0.0
    X[rows, N_DIR + d] = 0.0
    pred = forward(mi.net, X)[0][rows, d]
    target = gps.speed[tuple(entries.T)] / SPEED_MAX
    return float(((pred - target) ** 2).mean())


def fill_missing(gps: GpsKnowledgeGrid, star: list[GpsKnowledgeGrid], mi: InterpolatorModel) -> GpsKnowledgeGrid:
    """Fill missing entries that some averaged grid covers; observed entries stay as they are."""
    _check_star(gps, star, mi.windows)
    out = gps.copy()
    covered = np.zeros(gps.speed.shape, bool)
    for grid in star:
        covered |= grid.present
    target = covered & ~gps.observed
    entries = np.argwhere(target)
    if len(entries) == 0:
        return out
    keys, inverse = np.unique(entries[:, :3], axis=0, return_inverse=True)
    pred = forward(mi.net, interpolator_inputs(gps, star, keys))[0] * SPEED_MAX
    vals = np.clip(pred[inverse.reshape(-1), entries[:, 3]], SPEED_MIN, SPEED_MAX)
    idx = tuple(entries.T)
    out.speed[idx] = vals
    out.interpolated[idx] = True
    return out


# -- cross-domain knowledge --------------------------------------------------

@dataclass
class StaticGrid:
    poi_density: np.ndarray


def build_static_grid(pois: list[PoiRecord], g: GridSpec) -> StaticGrid:
    counts = np.zeros((g.rows, g.cols))
    skipped = 0
    for p in pois:
        try:
            c = cell_of(GpsPoint(p.lat, p.lon), g)
        except OutOfBounds:
            skipped += 1
            continue
        counts[c.h - 1, c.w - 1] += 1
    if skipped:
        log.warning("skipped %d out-of-bounds POIs", skipped)
    peak = counts.max()
    return StaticGrid(counts / peak if peak > 0 else counts)


def _interval_span(start_t, end_t, g):
    if end_t < start_t:
        raise BadRecord(f"record ends before it starts ({end_t} < {start_t})")
    return range(absolute_interval(start_t, g), absolute_interval(end_t, g) + 1)


@dataclass
class WeatherGrid:
    """Rain/snow/hail levels on calendar intervals; overlapping records keep the max."""
    cells: dict = field(default_factory=dict)      # (abs_interval, h, w) -> (3,) levels
    citywide: dict = field(default_factory=dict)   # abs_interval -> (3,) levels

    def levels(self, cell: CellIndex, abs_interval: int) -> np.ndarray:
        out = np.zeros(3)
        if abs_interval in self.citywide:
            out = np.maximum(out, self.citywide[abs_interval])
        key = (abs_interval, cell.h, cell.w)
        if key in self.cells:
            out = np.maximum(out, self.cells[key])
        return out


@dataclass
class EventGrid:
    counts: dict = field(default_factory=dict)  # (abs_interval, h, w) -> int

    def count(self, cell: CellIndex, abs_interval: int) -> int:
        return self.counts.get((abs_interval, cell.h, cell.w), 0)


def build_weather_grid(records: list[WeatherRecord], g: GridSpec) -> WeatherGrid:
    grid = WeatherGrid()
    for r in records:
        lv = np.array([r.rain, r.snow, r.hail], dtype=float)
        if r.lat is None or r.lon is None:
            for a in _interval_span(r.start_t, r.end_t, g):
                grid.citywide[a] = np.maximum(grid.citywide.get(a, 0.0), lv)
            continue
        try:
            c = cell_of(GpsPoint(r.lat, r.lon), g)
        except OutOfBounds:
            continue
        for a in _interval_span(r.start_t, r.end_t, g):
            key = (a, c.h, c.w)
            grid.cells[key] = np.maximum(grid.cells.get(key, 0.0), lv)
    return grid


def build_event_grid(records: list[EventRecord], g: GridSpec) -> EventGrid:
    grid = EventGrid()
    for r in records:
        try:
            c = cell_of(GpsPoint(r.lat, r.lon), g)
        except OutOfBounds:
            continue
        for a in _interval_span(r.start_t, r.end_t, g):
            key = (a, c.h, c.w)
            grid.counts[key] = grid.counts.get(key, 0) + 1
    return grid


@dataclass(frozen=True)
class DateFeatures:
    weekend: int = 0
    holiday: int = 0


def local_date(t: float, tz_offset: int = 0) -> dt.date:
    return (dt.datetime(1970, 1, 1) + dt.timedelta(seconds=t + tz_offset)).date()


def date_features(t: float, holidays, tz_offset: int = 0) -> DateFeatures:
    day = local_date(t, tz_offset)
    return DateFeatures(int(day.weekday() >= 5), int(day in holidays))


@dataclass
class KnowledgeGrids:
    """Everything needed to assemble a cell vector for one vehicle domain."""
    grid: GridSpec
    gps: GpsKnowledgeGrid
    static: StaticGrid
    weather: WeatherGrid
    events: EventGrid
    holidays: frozenset = frozenset()
    coverage: tuple[float, float] | None = None  # epoch span of ingested data

    def covers(self, t: float) -> bool:
        return self.coverage is not None and self.coverage[0] <= t <= self.coverage[1]


def assemble_cell_vector(cell: CellIndex, t: float, grids: KnowledgeGrids, date: DateFeatures | None = None,
                         g: GridSpec | None = None) -> np.ndarray:
    """Fixed-width feature vector in [0, 1]; see ``FEATURE_NAMES`` for the layout."""
    g = g or grids.grid
    if not (1 <= cell.h <= g.rows and 1 <= cell.w <= g.cols):
        raise OutOfBounds(f"cell {cell} outside {g.rows}x{g.cols} grid")
    if date is None:
        date = date_features(t, grids.holidays, g.tz_offset)
    interval = time_interval_of(t, g)
    a = absolute_interval(t, g)
    vec = np.zeros(CELL_VECTOR_WIDTH)
    vec[0] = date.weekend
    vec[1] = date.holiday
    vec[2] = grids.static.poi_density[cell.h - 1, cell.w - 1]
    vec[3:6] = grids.weather.levels(cell, a)
    vec[6] = min(grids.events.count(cell, a) / EVENT_CAP, 1.0)
    prof = grids.gps.speed[cell.h - 1, cell.w - 1, interval]
    present = ~np.isnan(prof)
    vec[7:7 + 2 * N_DIR:2] = np.where(present, np.minimum(np.nan_to_num(prof) / SPEED_MAX, 1.0), 0.0)
    vec[8:8 + 2 * N_DIR:2] = present
    angle = 2 * math.pi * interval / g.intervals
    vec[-2] = (math.sin(angle) + 1) / 2
    vec[-1] = (math.cos(angle) + 1) / 2
    return vec


# -- end-to-end build and persistence ----------------------------------------

@dataclass
class DomainKnowledge:
    """Built knowledge for one domain plus the pieces needed to rebuild it."""
    grids: KnowledgeGrids
    raw: GpsKnowledgeGrid
    star: list
    interpolator: InterpolatorModel | None


def build_domain_knowledge(trajectories: list[Trajectory], g: GridSpec, side, windows=DEFAULT_WINDOWS,
                           mi_cfg: TrainConfig | None = None, interpolate: bool = True) -> DomainKnowledge:
    samples = []
    for tr in trajectories:
        samples.extend(extract_speed_samples(tr, g))
    raw = build_gps_knowledge(samples, g)
    star = build_star(raw, windows)
    mi = None
    filled = raw
    if interpolate and star and raw.observed.sum() >= 8:
        mi = train_interpolator(raw, star, mi_cfg)
        filled = fill_missing(raw, star, mi)
    spans = [(tr.points[0].t, tr.points[-1].t) for tr in trajectories]
    spans += [(r.start_t, r.end_t) for r in side.weather] + [(r.start_t, r.end_t) for r in side.events]
    coverage = (min(s for s, _ in spans), max(e for _, e in spans)) if spans else None
    grids = KnowledgeGrids(g, filled, build_static_grid(side.pois, g), build_weather_grid(side.weather, g),
                           build_event_grid(side.events, g), frozenset(side.holidays), coverage)
    return DomainKnowledge(grids, raw, star, mi)


def save_grids(path, grids: KnowledgeGrids) -> None:
    meta, arrays = grids.gps.to_record("gps")
    w_keys = sorted(grids.weather.cells)
    c_keys = sorted(grids.weather.citywide)
    e_keys = sorted(grids.events.counts)
    arrays.update({
        "poi": grids.static.poi_density,
        "weather.keys": np.array(w_keys, dtype=np.int64).reshape(-1, 3),
        "weather.levels": np.array([grids.weather.cells[k] for k in w_keys]).reshape(-1, 3),
        "weather.citywide.keys": np.array(c_keys, dtype=np.int64),
        "weather.citywide.levels": np.array([grids.weather.citywide[k] for k in c_keys]).reshape(-1, 3),
        "events.keys": np.array(e_keys, dtype=np.int64).reshape(-1, 3),
        "events.counts": np.array([grids.events.counts[k] for k in e_keys], dtype=np.int64),
    })
    header = {
        "grid": grids.grid.to_dict(),
        "gps": meta,
        "holidays": sorted(d.isoformat() for d in grids.holidays),
        "coverage": list(grids.coverage) if grids.coverage else None,
        "counts": {"observed": int(grids.gps.observed.sum()), "interpolated": int(grids.gps.interpolated.sum()),
                   "weather": len(w_keys) + len(c_keys), "events": len(e_keys)},
    }
    container.save(path, "knowledge", header, arrays)


def load_grids(path) -> KnowledgeGrids:
    meta, arrays = container.load(path, "knowledge")
    g = GridSpec.from_dict(meta["grid"])
    gps = GpsKnowledgeGrid.from_record(g, meta["gps"], arrays, "gps")
    weather = WeatherGrid(
        {tuple(int(x) for x in k): v for k, v in zip(arrays["weather.keys"], arrays["weather.levels"])},
        {int(k): v for k, v in zip(arrays["weather.citywide.keys"], arrays["weather.citywide.levels"])},
    )
    events = EventGrid({tuple(int(x) for x in k): int(c) for k, c in zip(arrays["events.keys"], arrays["events.counts"])})
    holidays = frozenset(dt.date.fromisoformat(s) for s in meta["holidays"])
    cov = tuple(meta["coverage"]) if meta["coverage"] else None
    return KnowledgeGrids(g, gps, StaticGrid(arrays["poi"]), weather, events, holidays, cov)
