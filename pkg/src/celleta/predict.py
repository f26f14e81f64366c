"""Route travel-time estimation by walking the route cell by cell."""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSegment, EmptyRoute, ModelGridMismatch, ValidationError
from .geo import CellIndex, GpsPoint, GridSpec, haversine_distance, subdivide_segment, time_interval_of
from .knowledge import KnowledgeGrids, assemble_cell_vector
from .models import ModelBundle, eta_features, predict_cell_time, speed_level, top_k_mask
from .neural import forward


@dataclass
class RouteRequest:
    points: list[GpsPoint]
    start_time: float
    domain: str = ""

    @classmethod
    def from_json(cls, obj: dict) -> "RouteRequest":
        try:
            pts = [GpsPoint(float(p["lat"]), float(p["lon"]), float(p.get("t", 0.0))) for p in obj["points"]]
            return cls(pts, float(obj["start_time"]), str(obj.get("domain", "")))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed route request: {exc}") from None


@dataclass(frozen=True)
class RouteCell:
    cell: CellIndex
    chord_len: float


@dataclass(frozen=True)
class CellEstimate:
    cell: CellIndex
    interval: int
    chord_len: float
    seconds: float
    t_entry: float


@dataclass
class EtaResult:
    total_seconds: float
    breakdown: list[CellEstimate]
    start_time: float
    knowledge_degraded: bool = False

    @property
    def arrival(self) -> float:
        return self.start_time + self.total_seconds

    def to_json(self) -> dict:
        arrival = dt.datetime.fromtimestamp(self.arrival, tz=dt.timezone.utc)
        return {
            "total_seconds": self.total_seconds,
            "arrival": arrival.isoformat().replace("+00:00", "Z"),
            "arrival_epoch": self.arrival,
            "knowledge_degraded": self.knowledge_degraded,
            "breakdown": [
                {"h": e.cell.h, "w": e.cell.w, "interval": e.interval, "chord_m": e.chord_len,
                 "seconds": e.seconds, "t_entry": e.t_entry}
                for e in self.breakdown
            ],
        }


def convert_gps_to_cells(req: RouteRequest, g: GridSpec) -> list[RouteCell]:
    """Ordered cells along the route with the chord length travelled in each."""
    pts = req.points
    if len(pts) < 2:
        raise EmptyRoute("a route needs at least two points")
    out: list[RouteCell] = []
    for k, (a, b) in enumerate(zip(pts, pts[1:])):
        # timestamps beyond the first are optional; subdivision only needs order
        a = GpsPoint(a.lat, a.lon, float(k))
        b = GpsPoint(b.lat, b.lon, float(k + 1))
        try:
            subs = subdivide_segment(a, b, g)
        except DegenerateSegment:
            continue  # repeated position
        for s in subs:
            length = haversine_distance(s.a, s.b)
            if out and out[-1].cell == s.cell:
                out[-1] = RouteCell(s.cell, out[-1].chord_len + length)
            else:
                out.append(RouteCell(s.cell, length))
    if not out or sum(c.chord_len for c in out) <= 0:
        raise EmptyRoute("route has zero length")
    return out


def classifier_input(cell: CellIndex, t: float, grids: KnowledgeGrids, n_classes: int) -> np.ndarray:
    vec = assemble_cell_vector(cell, t, grids)
    return _with_level(vec, grids.gps.profile(cell, time_interval_of(t, grids.grid)), n_classes)


def _with_level(vec, profile, n_classes):
    level = speed_level(profile, n_classes) / n_classes if np.isfinite(profile).any() else 0.0
    return np.append(vec, level)


def cell_features(cells, times, chords, grids: KnowledgeGrids, bundle_parts) -> tuple[np.ndarray, np.ndarray]:
    """Batch classifier inputs and travel-time features for (cell, entry time, chord) triples.

    ``bundle_parts`` is ``(classifier, embedding, k)``.
    """
    classifier, embedding, k = bundle_parts
    n_classes = classifier.n_classes
    g = grids.grid
    vecs, cls_in = [], []
    for cell, t in zip(cells, times):
        vec = assemble_cell_vector(cell, t, grids)
        vecs.append(vec)
        cls_in.append(_with_level(vec, grids.gps.profile(cell, time_interval_of(t, g)), n_classes))
    cls_in = np.array(cls_in).reshape(len(vecs), -1)
    if not len(vecs):
        return cls_in, np.zeros((0, 0))
    sigma = top_k_mask(forward(classifier.net, cls_in)[0], k)
    feats = np.array([eta_features(v, s, embedding.vector(c), ch, g.phi)
                      for v, s, c, ch in zip(vecs, sigma, cells, chords)])
    return cls_in, feats


def estimate_route(req: RouteRequest, bundle: ModelBundle, grids: KnowledgeGrids) -> EtaResult:
    g = grids.grid
    if bundle.grid != g:
        raise ModelGridMismatch("bundle and knowledge grids use different grid specs")
    route = convert_gps_to_cells(req, g)
    t = req.start_time
    parts = (bundle.classifier, bundle.embedding, bundle.k)
    breakdown = []
    degraded = False
    for rc in route:
        degraded |= not grids.covers(t)
        _, feats = cell_features([rc.cell], [t], [rc.chord_len], grids, parts)
        secs = predict_cell_time(bundle.eta, feats[0])
        breakdown.append(CellEstimate(rc.cell, time_interval_of(t, g), rc.chord_len, secs, t))
        t += secs
    total = sum(e.seconds for e in breakdown)
    return EtaResult(total, breakdown, req.start_time, degraded)


def load_route(path) -> RouteRequest:
    with open(path, encoding="utf-8") as fh:
        return RouteRequest.from_json(json.load(fh))
