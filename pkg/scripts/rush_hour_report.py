"""Per-hour error of a model trained on a synthetic city with a morning and evening rush.

    python scripts/rush_hour_report.py --seed 0 --out results/hourly.csv
"""
import argparse
from pathlib import Path

from celleta.data import split_dataset
from celleta.evaluation import grouped_report, write_reports_csv
from celleta.models import ClassifierConfig, EtaConfig
from celleta.neural import TrainConfig
from celleta.pipeline import PipelineConfig, build_knowledge, evaluate_routes, train_domain, train_embedding
from celleta.roadnet import SdneConfig
from celleta.synth import SynthConfig, synth_generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-trips", type=int, default=500)
    ap.add_argument("--test-trips", type=int, default=1000)
    ap.add_argument("--out", type=Path, default=Path("results/hourly.csv"))
    args = ap.parse_args()

    world = synth_generate(SynthConfig(trips={"RV": args.train_trips + args.test_trips}, seed=args.seed))
    trips = world.trajectories["RV"]
    base, held_out = trips[:args.train_trips], trips[args.train_trips:]
    train = TrainConfig(min_delta=0.02)
    cfg = PipelineConfig(grid=world.grid, windows=(2, 4, 8, 48), sdne=SdneConfig(epochs=100),
                         classifier=ClassifierConfig(train=train), eta=EtaConfig(train=train)).with_seed(args.seed)
    split = split_dataset(base, args.seed)
    tr, va = split.select(base, "train"), split.select(base, "val")
    know = build_knowledge(tr, world.side, cfg)
    models = train_domain(tr, va, know.grids, train_embedding(tr, cfg), cfg, "RV")

    reports = grouped_report(evaluate_routes(models.bundle, know.grids, held_out), "hour")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_reports_csv(args.out, reports, "hour")
    for r in reports:
        print(f"{r.group}:00  n={r.n:4d}  MAPE {r.mape:6.2f}%  RMSE {r.rmse:7.2f}s")


if __name__ == "__main__":
    main()
