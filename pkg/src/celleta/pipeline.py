"""End-to-end orchestration: knowledge -> road embedding -> classifier -> travel-time model."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SideData, Trajectory
from .errors import BadConfig, EmptyTrajectory, EmptyProfile, InsufficientData
from .geo import GridSpec, SECONDS_PER_DAY, time_interval_of
from .knowledge import DEFAULT_WINDOWS, Crossing, DomainKnowledge, KnowledgeGrids, build_domain_knowledge, extract_crossings
from .models import (
    ClassifierConfig, ClassifierModel, EtaConfig, ModelBundle, class_label, dataset_max_speed,
    train_classifier, train_eta, transfer,
)
from .neural import TrainConfig
from .predict import RouteRequest, cell_features, estimate_route
from .roadnet import CellEmbedding, SdneConfig, build_road_graph, train_sdne

log = logging.getLogger(__name__)


@dataclass
class DataPaths:
    trajectories: str | None = None
    poi: str | None = None
    weather: str | None = None
    events: str | None = None
    holidays: str | None = None


def _mi_default():
    return TrainConfig(epochs=60, batch_size=256, lr=0.01, dropout=0.0, patience=8)


@dataclass
class PipelineConfig:
    grid: GridSpec
    windows: tuple = DEFAULT_WINDOWS
    interpolate: bool = True
    mi: TrainConfig = field(default_factory=_mi_default)
    sdne: SdneConfig = field(default_factory=SdneConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    eta: EtaConfig = field(default_factory=EtaConfig)
    transfer: TrainConfig = field(default_factory=TrainConfig)
    source_domain: str = "RV"
    target_domain: str = "SV"
    seed: int = 0
    paths: DataPaths = field(default_factory=DataPaths)

    def __post_init__(self):
        self.windows = tuple(self.windows)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        try:
            kw = {"grid": GridSpec(**d.pop("grid"))}
        except (KeyError, TypeError) as exc:
            raise BadConfig(f"config needs a valid 'grid' section: {exc}") from None
        sections = {"mi": TrainConfig, "sdne": SdneConfig, "classifier": ClassifierConfig,
                    "eta": EtaConfig, "transfer": TrainConfig, "paths": DataPaths}
        for key, typ in sections.items():
            if key in d:
                try:
                    kw[key] = typ(**d.pop(key))
                except TypeError as exc:
                    raise BadConfig(f"bad '{key}' section: {exc}") from None
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config keys {sorted(unknown)}")
        kw.update(d)
        cfg = cls(**kw)
        return cfg.with_seed(cfg.seed)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise BadConfig(f"config is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with ``seed`` pushed into every trainable component."""
        rep = dataclasses.replace
        return rep(self, seed=seed, mi=rep(self.mi, seed=seed), sdne=rep(self.sdne, seed=seed),
                   classifier=rep(self.classifier, train=rep(self.classifier.train, seed=seed)),
                   eta=rep(self.eta, train=rep(self.eta.train, seed=seed)),
                   transfer=rep(self.transfer, seed=seed))


def crossings_of(trajectories: list[Trajectory], g: GridSpec) -> list[Crossing]:
    out = []
    for tr in trajectories:
        try:
            out.extend(extract_crossings(tr, g))
        except EmptyTrajectory:
            continue
    return out


def build_knowledge(trajectories, side: SideData, cfg: PipelineConfig) -> DomainKnowledge:
    return build_domain_knowledge(trajectories, cfg.grid, side, cfg.windows, cfg.mi, cfg.interpolate)


def train_embedding(trajectories, cfg: PipelineConfig) -> CellEmbedding:
    paths = [[c.cell for c in extract_crossings(tr, cfg.grid)] for tr in trajectories if len(tr.points) >= 2]
    return train_sdne(build_road_graph(p for p in paths if p), cfg.sdne)


def classifier_rows(crossings, grids: KnowledgeGrids, n_classes: int, global_max: float):
    from .predict import classifier_input

    X, y = [], []
    for c in crossings:
        prof = grids.gps.profile(c.cell, time_interval_of(c.t, grids.grid))
        try:
            label = class_label(prof, global_max, n_classes)
        except EmptyProfile:
            continue
        X.append(classifier_input(c.cell, c.t, grids, n_classes))
        y.append(label)
    width = len(X[0]) if X else 0
    return np.array(X).reshape(len(X), width), np.array(y, dtype=np.int64)


def eta_rows(crossings, grids: KnowledgeGrids, classifier: ClassifierModel, embedding: CellEmbedding, k: int):
    crossings = [c for c in crossings if c.seconds > 0]
    _, feats = cell_features([c.cell for c in crossings], [c.t for c in crossings],
                             [c.chord_len for c in crossings], grids, (classifier, embedding, k))
    return feats, np.array([c.seconds for c in crossings])


@dataclass
class DomainModels:
    bundle: ModelBundle
    classifier_epochs: int
    eta_epochs: int


def train_domain(train: list[Trajectory], val: list[Trajectory], grids: KnowledgeGrids, embedding: CellEmbedding,
                 cfg: PipelineConfig, domain: str = "") -> DomainModels:
    g = grids.grid
    gmax = dataset_max_speed(grids.gps.speed)
    tr_x, va_x = crossings_of(train, g), crossings_of(val, g)
    N = cfg.classifier.n_classes
    Xc, yc = classifier_rows(tr_x, grids, N, gmax)
    Xcv, ycv = classifier_rows(va_x, grids, N, gmax)
    clf = train_classifier(Xc, yc, cfg.classifier, Xcv, ycv)
    Xe, se = eta_rows(tr_x, grids, clf, embedding, cfg.eta.k)
    Xev, sev = eta_rows(va_x, grids, clf, embedding, cfg.eta.k)
    eta = train_eta(Xe, se, cfg.eta, Xev, sev)
    bundle = ModelBundle(g, clf, eta, embedding, cfg.eta.k, gmax, domain)
    return DomainModels(bundle, clf.history.best_epoch, eta.history.best_epoch)


def transfer_domain(source: ModelBundle, train: list[Trajectory], val: list[Trajectory], grids: KnowledgeGrids,
                    cfg: PipelineConfig, domain: str = "") -> DomainModels:
    """Reuse the source bodies frozen; fit only the two heads on target data."""
    g = grids.grid
    gmax = dataset_max_speed(grids.gps.speed)
    tr_x, va_x = crossings_of(train, g), crossings_of(val, g)
    N = source.classifier.n_classes
    Xc, yc = classifier_rows(tr_x, grids, N, gmax)
    Xcv, ycv = classifier_rows(va_x, grids, N, gmax)
    clf = transfer(source.classifier, Xc, yc, cfg.transfer, Xcv, ycv)
    Xe, se = eta_rows(tr_x, grids, clf, source.embedding, source.k)
    Xev, sev = eta_rows(va_x, grids, clf, source.embedding, source.k)
    if len(Xe) == 0:
        raise InsufficientData("no target travel-time rows")
    eta = transfer(source.eta, Xe, se, cfg.transfer, Xev, sev)
    bundle = ModelBundle(g, clf, eta, source.embedding, source.k, gmax, domain)
    return DomainModels(bundle, clf.history.best_epoch, eta.history.best_epoch)


@dataclass(frozen=True)
class RouteResult:
    id: str
    truth: float
    pred: float
    start_hour: int
    distance_m: float
    event_count: int


def route_distance(tr: Trajectory) -> float:
    from .geo import haversine_distance
    return sum(haversine_distance(a, b) for a, b in zip(tr.points, tr.points[1:]))


def evaluate_routes(bundle: ModelBundle, grids: KnowledgeGrids, trajectories: list[Trajectory]) -> list[RouteResult]:
    """Predict each trajectory as a route from its first fix; truth is its recorded duration."""
    from .geo import absolute_interval

    out = []
    g = grids.grid
    for tr in trajectories:
        if tr.duration <= 0:
            continue
        res = estimate_route(RouteRequest(tr.points, tr.start_time, tr.domain), bundle, grids)
        hour = int(((tr.start_time + g.tz_offset) % SECONDS_PER_DAY) // 3600)
        events = sum(grids.events.count(e.cell, absolute_interval(e.t_entry, g)) for e in res.breakdown)
        out.append(RouteResult(tr.id, tr.duration, res.total_seconds, hour, route_distance(tr), events))
    return out
