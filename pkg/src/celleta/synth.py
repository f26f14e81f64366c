"""Synthetic Manhattan-grid city with a known speed field.

Roads run along every ``road_spacing``-th row and column through cell
centres.  Vehicles take random walks between intersections; inside a cell
they move at the true speed evaluated when they enter it, so every traversal
time is known exactly.  GPS points are emitted at a fixed cadence plus one at
every turn, which keeps point-to-point chords on the road.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import EventRecord, PoiRecord, SideData, Trajectory, WeatherRecord, save_side_data, save_trajectories
from .errors import BadConfig
from .geo import SECONDS_PER_DAY, CellIndex, GpsPoint, GridSpec, cell_of, haversine_distance
from .knowledge import SPEED_MAX, SPEED_MIN

RUSH_CENTRES = (7.5, 18.0)  # local hours
RUSH_WIDTH = 0.75           # hours, Gaussian sigma


def rush_profile(local_hour: float) -> float:
    """Two Gaussian bumps (morning, evening) with unit peaks."""
    out = 0.0
    for c in RUSH_CENTRES:
        d = (local_hour - c + 12) % 24 - 12
        out += math.exp(-d * d / (2 * RUSH_WIDTH ** 2))
    return out


@dataclass
class SynthConfig:
    lat_min: float = 39.10
    lon_min: float = -84.52
    phi: float = 0.001
    rows: int = 16
    cols: int = 16
    intervals: int = 96
    tz_offset: int = -5 * 3600
    road_spacing: int = 3
    base_speed: float = 12.0
    multipliers: dict = field(default_factory=lambda: {"RV": 1.0, "SV": 0.6})
    trips: dict = field(default_factory=lambda: {"RV": 400, "SV": 40})
    rush_amplitude: float = 0.4
    rush_jitter: float = 0.0   # per-crossing speed noise, scaled by the rush profile
    noise: float = 0.15        # static per-cell relative speed deviation
    event_slowdown: float = 0.0
    weather_slowdown: float = 0.0
    cadence: int = 5           # seconds between GPS fixes
    legs: tuple = (2, 6)
    days: int = 28
    start_date: str = "2018-01-01"
    n_pois: int = 150
    n_events: int = 40
    n_weather: int = 6
    holidays: tuple = ("2018-01-01", "2018-01-15", "2018-02-19")
    seed: int = 0

    def __post_init__(self):
        self.legs = tuple(self.legs)
        self.holidays = tuple(self.holidays)
        if self.road_spacing < 1 or self.rows < self.road_spacing + 1 or self.cols < self.road_spacing + 1:
            raise BadConfig("grid too small for the road spacing")
        if self.cadence < 1 or self.base_speed <= 0:
            raise BadConfig("cadence and base speed must be positive")
        if not 0 <= self.rush_amplitude < 1:
            raise BadConfig("rush amplitude must lie in [0, 1)")
        if set(self.trips) - set(self.multipliers):
            raise BadConfig("every domain with trips needs a speed multiplier")
        for m in self.multipliers.values():
            lo = self.base_speed * m * (1 - self.rush_amplitude) * max(1 - 3 * self.noise, 0.0)
            hi = self.base_speed * m * (1 + 3 * self.noise)
            if hi > SPEED_MAX or m <= 0:
                raise BadConfig(f"domain multiplier {m} pushes speeds outside [{SPEED_MIN}, {SPEED_MAX}] m/s")
            if lo < SPEED_MIN and self.noise == 0:
                raise BadConfig("speeds fall below the plausibility floor")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.lat_min, self.lon_min, self.phi, self.rows, self.cols, self.intervals, self.tz_offset)

    @property
    def epoch0(self) -> int:
        d = dt.date.fromisoformat(self.start_date)
        return int((dt.datetime(d.year, d.month, d.day) - dt.datetime(1970, 1, 1)).total_seconds()) - self.tz_offset


@dataclass
class Piece:
    cell: CellIndex
    a: tuple[float, float]
    b: tuple[float, float]
    length: float


class SynthWorld:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.grid = cfg.grid
        rng = np.random.default_rng(cfg.seed)
        self.rng = rng
        off = cfg.road_spacing // 2 + 1
        self.road_rows = list(range(off, cfg.rows + 1, cfg.road_spacing))
        self.road_cols = list(range(off, cfg.cols + 1, cfg.road_spacing))
        # clipped so the speed floor holds for any noise level
        self.cell_factor = np.clip(1.0 + cfg.noise * rng.standard_normal((cfg.rows, cfg.cols)), 0.2, None)
        self.side = self._side_data(rng)
        self._event_index = self._index_events()
        self.trajectories: dict[str, list[Trajectory]] = {}
        for dom in sorted(cfg.trips):
            self.trajectories[dom] = [self._trip(dom, i, rng) for i in range(cfg.trips[dom])]

    # -- speed field ---------------------------------------------------------
    def local_hour(self, t: float) -> float:
        return ((t + self.cfg.tz_offset) % SECONDS_PER_DAY) / 3600.0

    def true_speed(self, cell: CellIndex, t: float, domain: str) -> float:
        c = self.cfg
        v = c.base_speed * c.multipliers[domain] * (1 - c.rush_amplitude * min(rush_profile(self.local_hour(t)), 1.0))
        v *= self.cell_factor[cell.h - 1, cell.w - 1]
        if c.event_slowdown and self._event_active(cell, t):
            v *= 1 - c.event_slowdown
        if c.weather_slowdown:
            v *= 1 - c.weather_slowdown * self._rain(t)
        return float(min(max(v, SPEED_MIN), SPEED_MAX))

    def _event_active(self, cell, t):
        return any(s <= t <= e for s, e in self._event_index.get(cell, ()))

    def _rain(self, t):
        return max((r.rain for r in self.side.weather if r.start_t <= t <= r.end_t), default=0.0)

    def _index_events(self):
        idx: dict[CellIndex, list] = {}
        for e in self.side.events:
            idx.setdefault(cell_of(GpsPoint(e.lat, e.lon), self.grid), []).append((e.start_t, e.end_t))
        return idx

    # -- geometry ------------------------------------------------------------
    def centre(self, h: int, w: int) -> tuple[float, float]:
        return self.grid.cell_center(CellIndex(h, w))

    def road_cells(self) -> set[CellIndex]:
        cells = {CellIndex(r, w) for r in self.road_rows for w in range(self.road_cols[0], self.road_cols[-1] + 1)}
        cells |= {CellIndex(h, c) for c in self.road_cols for h in range(self.road_rows[0], self.road_rows[-1] + 1)}
        return cells

    def leg_pieces(self, start: tuple[int, int], end: tuple[int, int], frac: float = 0.0) -> list[Piece]:
        """Pieces from the centre of cell ``start`` to the centre of ``end`` along one road.

        ``frac`` skips that fraction of the leg's length at the start.
        """
        (h0, w0), (h1, w1) = start, end
        if h0 != h1 and w0 != w1:
            raise ValueError("legs run along a single row or column")
        n = abs(h1 - h0) + abs(w1 - w0)
        step = (int(np.sign(h1 - h0)), int(np.sign(w1 - w0)))
        p0 = np.array(self.centre(h0, w0))
        p1 = np.array(self.centre(h1, w1))
        s_from = frac * n  # position along the leg in cell units, centre of start cell = 0
        pieces = []
        for k in range(n + 1):
            lo = max(k - 0.5, 0.0, s_from)
            hi = min(k + 0.5, float(n))
            if hi <= lo:
                continue
            a = p0 + (p1 - p0) * (lo / n)
            b = p0 + (p1 - p0) * (hi / n)
            cell = CellIndex(h0 + step[0] * k, w0 + step[1] * k)
            pieces.append(Piece(cell, (a[0], a[1]), (b[0], b[1]),
                                haversine_distance(GpsPoint(a[0], a[1]), GpsPoint(b[0], b[1]))))
        return pieces

    def _walk(self, rng, n_legs):
        rows, cols = self.road_rows, self.road_cols
        i, j = int(rng.integers(len(rows))), int(rng.integers(len(cols)))
        legs, prev = [], None
        for _ in range(n_legs):
            moves = []
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if 0 <= ni < len(rows) and 0 <= nj < len(cols) and (ni, nj) != prev:
                    moves.append((ni, nj))
            ni, nj = moves[int(rng.integers(len(moves)))]
            legs.append(((rows[i], cols[j]), (rows[ni], cols[nj])))
            prev, i, j = (i, j), ni, nj
        return legs

    # -- trips ---------------------------------------------------------------
    def traverse(self, pieces: list[Piece], start_t: float, domain: str, rng=None):
        """Drive the pieces; returns per-piece (entry time, exit time).

        Speed is fixed on entering a cell and kept for consecutive pieces in it.
        """
        t = float(start_t)
        times, cur_cell, v = [], None, None
        for pc in pieces:
            if pc.cell != cur_cell:
                cur_cell = pc.cell
                v = self.true_speed(pc.cell, t, domain)
                if rng is not None and self.cfg.rush_jitter:
                    sd = self.cfg.rush_jitter * min(rush_profile(self.local_hour(t)), 1.0)
                    v = float(np.clip(v * (1 + sd * rng.standard_normal()), SPEED_MIN, SPEED_MAX))
            dt_ = pc.length / v
            times.append((t, t + dt_))
            t += dt_
        return times

    def _trip(self, domain: str, i: int, rng) -> Trajectory:
        c = self.cfg
        n_legs = int(rng.integers(c.legs[0], c.legs[1] + 1))
        legs = self._walk(rng, n_legs)
        frac = float(rng.uniform(0.0, 0.9))
        pieces = []
        for k, (a, b) in enumerate(legs):
            pieces.extend(self.leg_pieces(a, b, frac if k == 0 else 0.0))
        start = self.cfg.epoch0 + int(rng.integers(c.days)) * SECONDS_PER_DAY + int(rng.integers(SECONDS_PER_DAY))
        times = self.traverse(pieces, start, domain, rng)
        return Trajectory(f"{domain}-{i:05d}", domain, self._emit(pieces, times, legs, start))

    def _emit(self, pieces, times, legs, start):
        cad = self.cfg.cadence
        turn_points = {leg[0] for leg in legs[1:]}
        pts = []
        nxt = float(start)
        for pc, (t0, t1) in zip(pieces, times):
            while nxt <= t1 + 1e-9:
                f = (nxt - t0) / (t1 - t0) if t1 > t0 else 0.0
                f = min(max(f, 0.0), 1.0)
                pts.append(GpsPoint(pc.a[0] + f * (pc.b[0] - pc.a[0]), pc.a[1] + f * (pc.b[1] - pc.a[1]), nxt))
                nxt += cad
            # a turn vertex is the end point of the last piece of a leg
            centre = self.centre(pc.cell.h, pc.cell.w)
            if (pc.cell.h, pc.cell.w) in turn_points and np.allclose(pc.b, centre, atol=1e-12) and t1 - pts[-1].t >= 1e-3:
                pts.append(GpsPoint(pc.b[0], pc.b[1], t1))
        if pts[-1].t < times[-1][1] - 1e-9:
            pts.append(GpsPoint(pieces[-1].b[0], pieces[-1].b[1], times[-1][1]))
        return pts

    # -- side data -----------------------------------------------------------
    def _side_data(self, rng) -> SideData:
        c, g = self.cfg, self.grid
        side = SideData()
        for _ in range(c.n_pois):
            # clustered near roads, thinning with distance from the grid centre
            h = int(rng.choice(self.road_rows))
            w = int(rng.integers(1, c.cols + 1))
            if rng.random() < 0.5:
                h, w = int(rng.integers(1, c.rows + 1)), int(rng.choice(self.road_cols))
            lat0, lat1, lon0, lon1 = g.cell_bounds(CellIndex(h, w))
            side.pois.append(PoiRecord(float(rng.uniform(lat0, lat1)), float(rng.uniform(lon0, lon1)),
                                       str(rng.choice(["cafe", "store", "office", "school"]))))
        span = c.days * SECONDS_PER_DAY
        for _ in range(c.n_events):
            h = int(rng.choice(self.road_rows))
            w = int(rng.choice(self.road_cols))
            lat, lon = self.centre(h, w)
            s = c.epoch0 + int(rng.integers(span))
            side.events.append(EventRecord(lat, lon, s, s + int(rng.integers(1800, 4 * 3600)),
                                           str(rng.choice(["crash", "blockage", "concert", "game"]))))
        for _ in range(c.n_weather):
            s = c.epoch0 + int(rng.integers(span))
            side.weather.append(WeatherRecord(None, None, s, s + int(rng.integers(3600, 8 * 3600)),
                                              round(float(rng.uniform(0.2, 1.0)), 3), 0.0, 0.0))
        side.holidays = {dt.date.fromisoformat(d) for d in c.holidays}
        return side

    def all_trajectories(self) -> list[Trajectory]:
        return [t for dom in sorted(self.trajectories) for t in self.trajectories[dom]]

    def write(self, directory) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = save_side_data(directory, self.side)
        paths["trajectories"] = directory / "trajectories.jsonl"
        save_trajectories(paths["trajectories"], self.all_trajectories())
        paths["truth"] = directory / "truth.json"
        cfg = asdict(self.cfg)
        truth = {"config": cfg, "cell_factor": self.cell_factor.round(12).tolist(),
                 "road_rows": self.road_rows, "road_cols": self.road_cols}
        paths["truth"].write_text(json.dumps(truth, sort_keys=True, indent=1), encoding="utf-8")
        return paths


def synth_generate(cfg: SynthConfig) -> SynthWorld:
    return SynthWorld(cfg)
