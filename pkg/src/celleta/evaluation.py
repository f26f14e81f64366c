"""Error metrics, grouped error reports, and the transfer-versus-scratch experiment."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .data import SideData, Trajectory, split_dataset
from .errors import EmptyGroupSet, LengthMismatch, ValidationError, ZeroTruth
from .pipeline import (
    PipelineConfig, RouteResult, build_knowledge, evaluate_routes, train_domain, train_embedding, transfer_domain,
)

log = logging.getLogger(__name__)

METERS_PER_MILE = 1609.344
DISTANCE_BANDS = (("<5mi", 0.0, 5.0), ("5-20mi", 5.0, 20.0), (">20mi", 20.0, float("inf")))


def _pairs(truths, preds):
    y = np.asarray(truths, dtype=float).reshape(-1)
    p = np.asarray(preds, dtype=float).reshape(-1)
    if y.size != p.size or y.size == 0:
        raise LengthMismatch(f"{y.size} truths vs {p.size} predictions")
    return y, p


def mape(truths, preds) -> float:
    """Mean absolute percentage error, in percent."""
    y, p = _pairs(truths, preds)
    if (y == 0).any():
        raise ZeroTruth("MAPE is undefined for zero ground truth")
    return 100.0 / y.size * float(np.abs((y - p) / y).sum())


def rmse(truths, preds) -> float:
    y, p = _pairs(truths, preds)
    return float(np.sqrt(((y - p) ** 2).sum() / y.size))


@dataclass(frozen=True)
class MetricReport:
    mape: float
    rmse: float
    n: int
    group: str | None = None


def report(truths, preds, group=None) -> MetricReport:
    return MetricReport(mape(truths, preds), rmse(truths, preds), len(truths), group)


def _distance_band(meters: float) -> int:
    miles = meters / METERS_PER_MILE
    for i, (_, lo, hi) in enumerate(DISTANCE_BANDS):
        if lo <= miles < hi:
            return i
    return len(DISTANCE_BANDS) - 1


def grouped_report(results: list[RouteResult], group_by: str) -> list[MetricReport]:
    """One report per non-empty group, ordered by hour / band / event count."""
    if not results:
        raise EmptyGroupSet("no results to group")
    if group_by == "hour":
        key, label = (lambda r: r.start_hour), (lambda k: f"{k:02d}")
    elif group_by == "distance_band":
        key, label = (lambda r: _distance_band(r.distance_m)), (lambda k: DISTANCE_BANDS[k][0])
    elif group_by == "event_count":
        key, label = (lambda r: r.event_count), str
    else:
        raise ValidationError(f"unknown grouping {group_by!r}")
    groups: dict[int, list[RouteResult]] = {}
    for r in results:
        groups.setdefault(key(r), []).append(r)
    return [report([r.truth for r in groups[k]], [r.pred for r in groups[k]], label(k)) for k in sorted(groups)]


def write_reports_csv(path, reports: list[MetricReport], group_by: str = "group") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([group_by, "n", "mape_pct", "rmse_s"])
        for r in reports:
            w.writerow([r.group if r.group is not None else "all", r.n, f"{r.mape:.6f}", f"{r.rmse:.6f}"])


@dataclass
class ExperimentRow:
    method: str
    mape: float
    rmse: float
    n: int
    wall_time_s: float
    classifier_best_epoch: int
    eta_best_epoch: int


@dataclass
class TransferComparison:
    rows: list[ExperimentRow]

    def row(self, method: str) -> ExperimentRow:
        return next(r for r in self.rows if r.method == method)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            fields = [f.name for f in dataclasses.fields(ExperimentRow)]
            w.writerow(fields)
            for r in self.rows:
                w.writerow([getattr(r, f) for f in fields])


def run_transfer_experiment(source: list[Trajectory], target: list[Trajectory], side: SideData,
                            cfg: PipelineConfig, csv_path=None) -> TransferComparison:
    """Train on the source domain, then compare head-only transfer with a from-scratch target model.

    Both target models get the same epoch budget and patience (``cfg.transfer``).
    Errors are route-level on the held-out target test split.
    """
    s_split = split_dataset(source, cfg.seed)
    t_split = split_dataset(target, cfg.seed)
    s_train, s_val = s_split.select(source, "train"), s_split.select(source, "val")
    t_train, t_val, t_test = (t_split.select(target, p) for p in ("train", "val", "test"))

    src_k = build_knowledge(s_train, side, cfg)
    tgt_k = build_knowledge(t_train, side, cfg)
    embedding = train_embedding(s_train + t_train, cfg)
    src = train_domain(s_train, s_val, src_k.grids, embedding, cfg, cfg.source_domain)

    t0 = time.perf_counter()
    tl = transfer_domain(src.bundle, t_train, t_val, tgt_k.grids, cfg, cfg.target_domain)
    tl_time = time.perf_counter() - t0

    budget = cfg.transfer
    rep = dataclasses.replace
    scratch_cfg = rep(cfg, classifier=rep(cfg.classifier, train=rep(cfg.classifier.train, epochs=budget.epochs,
                                                                      patience=budget.patience)),
                      eta=rep(cfg.eta, train=rep(cfg.eta.train, epochs=budget.epochs, patience=budget.patience)))
    t0 = time.perf_counter()
    sc = train_domain(t_train, t_val, tgt_k.grids, embedding, scratch_cfg, cfg.target_domain)
    sc_time = time.perf_counter() - t0

    rows = []
    for name, models, wall in (("transfer", tl, tl_time), ("scratch", sc, sc_time)):
        res = evaluate_routes(models.bundle, tgt_k.grids, t_test)
        r = report([x.truth for x in res], [x.pred for x in res])
        rows.append(ExperimentRow(name, r.mape, r.rmse, r.n, wall, models.classifier_epochs, models.eta_epochs))
        log.info("%s: MAPE %.2f%% RMSE %.2fs (n=%d, %.1fs)", name, r.mape, r.rmse, r.n, wall)
    out = TransferComparison(rows)
    if csv_path is not None:
        out.write_csv(csv_path)
    return out
