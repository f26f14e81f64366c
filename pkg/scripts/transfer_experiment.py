"""Transfer vs from-scratch training on a synthetic city, over several seeds.

    python scripts/transfer_experiment.py --seeds 0 1 2 --out results/transfer.csv
"""
import argparse
import csv
import dataclasses
import logging
from pathlib import Path

import numpy as np

from celleta.evaluation import run_transfer_experiment
from celleta.models import ClassifierConfig, EtaConfig
from celleta.neural import TrainConfig
from celleta.pipeline import PipelineConfig
from celleta.roadnet import SdneConfig
from celleta.synth import SynthConfig, synth_generate


def config_for(grid, seed, min_delta):
    train = TrainConfig(min_delta=min_delta)
    return PipelineConfig(grid=grid, windows=(2, 4, 8, 48), sdne=SdneConfig(epochs=100),
                          classifier=ClassifierConfig(train=train), eta=EtaConfig(train=train),
                          transfer=train).with_seed(seed)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--source-trips", type=int, default=300)
    ap.add_argument("--target-trips", type=int, default=30)
    ap.add_argument("--min-delta", type=float, default=0.02)
    ap.add_argument("--out", type=Path, default=Path("results/transfer.csv"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    rows = []
    for seed in args.seeds:
        world = synth_generate(SynthConfig(trips={"RV": args.source_trips, "SV": args.target_trips}, seed=seed))
        out = run_transfer_experiment(world.trajectories["RV"], world.trajectories["SV"], world.side,
                                      config_for(world.grid, seed, args.min_delta))
        rows += [{"seed": seed, **dataclasses.asdict(r)} for r in out.rows]

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for method in ("transfer", "scratch"):
        sel = [r for r in rows if r["method"] == method]
        print(f"{method:9s} MAPE {np.mean([r['mape'] for r in sel]):6.2f}%  "
              f"RMSE {np.mean([r['rmse'] for r in sel]):7.2f}s  "
              f"best epoch {np.mean([r['eta_best_epoch'] for r in sel]):5.1f}")


if __name__ == "__main__":
    main()
