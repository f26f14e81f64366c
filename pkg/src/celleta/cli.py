"""Command line front end.

Every subcommand reads the same JSON config (``--config``), accepts ``--seed``
and writes into the work directory given by ``--out``.  Artifacts produced by
one step are picked up from that directory by the next:

    synth -> extract -> train-roadnet -> train-classifier -> train-eta -> transfer -> predict / eval
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import container
from .data import DatasetSplit, load_side_data, load_trajectories, split_dataset
from .errors import BadConfig, CellEtaError, DataError, InsufficientData, ValidationError
from .evaluation import grouped_report, report, run_transfer_experiment, write_reports_csv
from .knowledge import load_grids, save_grids
from .models import ModelBundle, dataset_max_speed, load_classifier, save_classifier, train_classifier, train_eta
from .neural import History
from .pipeline import (
    PipelineConfig, build_knowledge, classifier_rows, crossings_of, eta_rows, evaluate_routes, train_embedding,
    transfer_domain,
)
from .predict import estimate_route, load_route
from .roadnet import CellEmbedding, build_road_graph, write_edge_list
from .synth import SynthConfig, synth_generate

log = logging.getLogger("celleta")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA = 0, 2, 3


# -- config and work-directory plumbing --------------------------------------

def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BadConfig(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config is not valid JSON: {exc}") from None


def load_config(path, seed: int | None) -> PipelineConfig:
    raw = _read_json(path)
    raw.pop("synth", None)
    cfg = PipelineConfig.from_dict(raw)
    base = Path(path).resolve().parent
    paths = cfg.paths
    for f in dataclasses.fields(paths):
        v = getattr(paths, f.name)
        if v is not None and not Path(v).is_absolute():
            setattr(paths, f.name, str(base / v))
    return cfg.with_seed(seed) if seed is not None else cfg


def _trajectories(cfg: PipelineConfig):
    if not cfg.paths.trajectories:
        raise BadConfig("config 'paths.trajectories' is required")
    return load_trajectories(cfg.paths.trajectories)


def _side(cfg: PipelineConfig):
    p = cfg.paths
    return load_side_data(p.poi, p.weather, p.events, p.holidays)


def _by_domain(trajs):
    out = {}
    for t in trajs:
        out.setdefault(t.domain, []).append(t)
    return out


def _split_path(out: Path) -> Path:
    return out / "split.json"


def _load_split(out: Path) -> DatasetSplit:
    p = _split_path(out)
    if not p.exists():
        raise InsufficientData(f"{p} missing; run 'extract' first")
    d = json.loads(p.read_text(encoding="utf-8"))
    return DatasetSplit(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), d["seed"])


def _partition(trajs, split: DatasetSplit, part: str, domain: str):
    return [t for t in split.select(trajs, part) if t.domain == domain]


def _need(path: Path, step: str) -> Path:
    if not path.exists():
        raise InsufficientData(f"{path} missing; run '{step}' first")
    return path


def _history_csv(path: Path, hist: History) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss), 1):
            w.writerow([i, f"{a:.8g}", f"{b:.8g}"])


def _save_embedding(path: Path, emb: CellEmbedding) -> None:
    meta, arrays = emb.to_record("embedding")
    container.save(path, "embedding", meta, arrays)


def _load_embedding(path: Path) -> CellEmbedding:
    meta, arrays = container.load(path, "embedding")
    return CellEmbedding.from_record(meta, arrays, "embedding")


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> None:
    raw = _read_json(args.config) if args.config else {}
    try:
        scfg = SynthConfig(**raw.get("synth", {}))
    except TypeError as exc:
        raise BadConfig(f"bad 'synth' section: {exc}") from None
    if args.seed is not None:
        scfg = dataclasses.replace(scfg, seed=args.seed)
    world = synth_generate(scfg)
    paths = world.write(args.out)
    raw["synth"] = dataclasses.asdict(scfg)
    raw["grid"] = scfg.grid.to_dict()
    raw["paths"] = {k: paths[k].name for k in ("trajectories", "poi", "weather", "events", "holidays")}
    raw.setdefault("source_domain", "RV")
    raw.setdefault("target_domain", "SV")
    raw["seed"] = scfg.seed
    (Path(args.out) / "config.json").write_text(json.dumps(raw, indent=2, sort_keys=True), encoding="utf-8")
    print(f"wrote {sum(len(v) for v in world.trajectories.values())} trajectories to {args.out}")


def cmd_extract(args) -> None:
    cfg, out = load_config(args.config, args.seed), Path(args.out)
    trajs, side = _trajectories(cfg), _side(cfg)
    split = split_dataset(trajs, cfg.seed)
    _split_path(out).write_text(json.dumps(dataclasses.asdict(split), indent=1), encoding="utf-8")
    rows = []
    for dom, group in sorted(_by_domain(trajs).items()):
        train = _partition(trajs, split, "train", dom)
        k = build_knowledge(train, side, cfg)
        save_grids(out / f"knowledge_{dom}.ctn", k.grids)
        rows.append([dom, len(group), len(train), int(k.raw.observed.sum()), int(k.grids.gps.interpolated.sum())])
    with open(out / "extract_report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "trajectories", "train_trajectories", "observed_keys", "interpolated_keys"])
        w.writerows(rows)


def cmd_train_roadnet(args) -> None:
    cfg, out = load_config(args.config, args.seed), Path(args.out)
    trajs, split = _trajectories(cfg), _load_split(out)
    emb = train_embedding(split.select(trajs, "train"), cfg)
    _save_embedding(out / "embedding.ctn", emb)
    from .knowledge import extract_crossings
    paths = [[c.cell for c in extract_crossings(t, cfg.grid)] for t in split.select(trajs, "train")]
    write_edge_list(out / "road_edges.txt", build_road_graph(p for p in paths if p))
    with open(out / "roadnet_loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows([[i, f"{v:.8g}"] for i, v in enumerate(emb.loss_history, 1)])


def _domain_inputs(args, cfg, out):
    dom = args.domain or cfg.source_domain
    trajs, split = _trajectories(cfg), _load_split(out)
    grids = load_grids(_need(out / f"knowledge_{dom}.ctn", "extract"))
    if grids.grid != cfg.grid:
        raise BadConfig("knowledge grid differs from the config grid")
    tr = crossings_of(_partition(trajs, split, "train", dom), cfg.grid)
    va = crossings_of(_partition(trajs, split, "val", dom), cfg.grid)
    return dom, grids, tr, va


def cmd_train_classifier(args) -> None:
    cfg, out = load_config(args.config, args.seed), Path(args.out)
    dom, grids, tr, va = _domain_inputs(args, cfg, out)
    gmax = dataset_max_speed(grids.gps.speed)
    N = cfg.classifier.n_classes
    X, y = classifier_rows(tr, grids, N, gmax)
    Xv, yv = classifier_rows(va, grids, N, gmax)
    clf = train_classifier(X, y, cfg.classifier, Xv, yv)
    save_classifier(out / f"classifier_{dom}.ctn", clf, gmax, cfg.grid)
    _history_csv(out / f"classifier_{dom}_history.csv", clf.history)


def cmd_train_eta(args) -> None:
    cfg, out = load_config(args.config, args.seed), Path(args.out)
    dom, grids, tr, va = _domain_inputs(args, cfg, out)
    clf, gmax, _ = load_classifier(_need(out / f"classifier_{dom}.ctn", "train-classifier"))
    emb = _load_embedding(_need(out / "embedding.ctn", "train-roadnet"))
    X, s = eta_rows(tr, grids, clf, emb, cfg.eta.k)
    Xv, sv = eta_rows(va, grids, clf, emb, cfg.eta.k)
    eta = train_eta(X, s, cfg.eta, Xv, sv)
    ModelBundle(cfg.grid, clf, eta, emb, cfg.eta.k, gmax, dom).save(out / f"bundle_{dom}.ctn")
    _history_csv(out / f"eta_{dom}_history.csv", eta.history)


def cmd_transfer(args) -> None:
    cfg, out = load_config(args.config, args.seed), Path(args.out)
    src, dst = args.source or cfg.source_domain, args.target or cfg.target_domain
    source = ModelBundle.load(_need(out / f"bundle_{src}.ctn", "train-eta"))
    trajs, split = _trajectories(cfg), _load_split(out)
    grids = load_grids(_need(out / f"knowledge_{dst}.ctn", "extract"))
    res = transfer_domain(source, _partition(trajs, split, "train", dst), _partition(trajs, split, "val", dst),
                          grids, cfg, dst)
    res.bundle.save(out / f"bundle_{dst}.ctn")
    _history_csv(out / f"transfer_{dst}_eta_history.csv", res.bundle.eta.history)


def cmd_predict(args) -> None:
    out = Path(args.out)
    req = load_route(args.route)
    dom = args.domain or req.domain
    if not dom and args.config:
        dom = load_config(args.config, None).source_domain
    bundle = ModelBundle.load(_need(out / f"bundle_{dom}.ctn", "train-eta"))
    grids = load_grids(_need(out / f"knowledge_{dom}.ctn", "extract"))
    result = estimate_route(req, bundle, grids).to_json()
    text = json.dumps(result, indent=2)
    (Path(args.result) if args.result else out / "eta.json").write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_eval(args) -> None:
    cfg, out = load_config(args.config, args.seed), Path(args.out)
    trajs = _trajectories(cfg)
    if args.compare_transfer:
        doms = _by_domain(trajs)
        run_transfer_experiment(doms.get(cfg.source_domain, []), doms.get(cfg.target_domain, []), _side(cfg),
                                cfg, out / "transfer_experiment.csv")
    if args.sweep_units:
        _unit_sweep(cfg, trajs, [int(u) for u in args.sweep_units.split(",")], out / "unit_sweep.csv")
    dom = args.domain or cfg.target_domain
    bundle_path = out / f"bundle_{dom}.ctn"
    if not bundle_path.exists() and (args.compare_transfer or args.sweep_units):
        return
    bundle = ModelBundle.load(_need(bundle_path, "train-eta"))
    grids = load_grids(_need(out / f"knowledge_{dom}.ctn", "extract"))
    results = evaluate_routes(bundle, grids, _partition(trajs, _load_split(out), "test", dom))
    if not results:
        raise InsufficientData(f"no test routes for domain {dom}")
    write_reports_csv(out / f"eval_{dom}.csv", [report([r.truth for r in results], [r.pred for r in results])])
    for key in ("hour", "distance_band", "event_count"):
        write_reports_csv(out / f"eval_{dom}_{key}.csv", grouped_report(results, key), key)


def _unit_sweep(cfg: PipelineConfig, trajs, units, path) -> None:
    """Travel-time hidden width sweep on the source domain (every hidden layer set to the same width)."""
    from .pipeline import train_domain

    dom = cfg.source_domain
    group = _by_domain(trajs).get(dom, [])
    split = split_dataset(group, cfg.seed)
    train, val, test = (split.select(group, p) for p in ("train", "val", "test"))
    k = build_knowledge(train, _side(cfg), cfg)
    emb = train_embedding(train, cfg)
    rows = []
    for u in units:
        c = dataclasses.replace(cfg, eta=dataclasses.replace(cfg.eta, hidden=(u,) * len(cfg.eta.hidden)))
        models = train_domain(train, val, k.grids, emb, c, dom)
        res = evaluate_routes(models.bundle, k.grids, test)
        r = report([x.truth for x in res], [x.pred for x in res])
        rows.append([u, r.n, f"{r.mape:.6f}", f"{r.rmse:.6f}", models.eta_epochs])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["units", "n", "mape_pct", "rmse_s", "eta_best_epoch"])
        w.writerows(rows)


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="celleta", description="Cell-based route travel-time estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, config_required=True, help=None):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", required=config_required, help="pipeline JSON config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", required=True, help="work directory for artifacts and reports")
        sp.set_defaults(func=fn)
        return sp

    add("synth", cmd_synth, False, "generate a synthetic city and a matching config")
    add("extract", cmd_extract, help="split data and build knowledge grids per domain")
    add("train-roadnet", cmd_train_roadnet, help="build the road graph and train cell embeddings")
    add("train-classifier", cmd_train_classifier, help="train the traffic-level classifier").add_argument("--domain")
    add("train-eta", cmd_train_eta, help="train the travel-time model and write a bundle").add_argument("--domain")
    sp = add("transfer", cmd_transfer, help="fine-tune source heads on the target domain")
    sp.add_argument("--source")
    sp.add_argument("--target")
    sp = add("predict", cmd_predict, False, "estimate one route")
    sp.add_argument("--route", required=True, help="route JSON: points, start_time, domain")
    sp.add_argument("--domain")
    sp.add_argument("--result", help="where to write the EtaResult JSON (default OUT/eta.json)")
    sp = add("eval", cmd_eval, help="error reports on the test split")
    sp.add_argument("--domain")
    sp.add_argument("--compare-transfer", action="store_true", help="run the transfer-vs-scratch experiment")
    sp.add_argument("--sweep-units", help="comma-separated hidden widths for the travel-time model")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CellEtaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
