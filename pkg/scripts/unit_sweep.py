"""Hidden-width sweep for the travel-time model through the CLI pipeline.

    python scripts/unit_sweep.py --units 64,128,256 --out results/sweep
"""
import argparse
import json
from pathlib import Path

from celleta.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", default="64,128,256")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trips", type=int, default=300)
    ap.add_argument("--out", type=Path, default=Path("results/sweep"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    seed_cfg = args.out / "seed.json"
    seed_cfg.write_text(json.dumps({"synth": {"trips": {"RV": args.trips, "SV": 10}},
                                    "windows": [2, 4, 8, 48], "sdne": {"epochs": 100}}))
    common = ["--seed", str(args.seed), "--out", str(args.out)]
    if cli(["synth", "--config", str(seed_cfg)] + common):
        raise SystemExit("synth failed")
    code = cli(["eval", "--config", str(args.out / "config.json"), "--sweep-units", args.units] + common)
    if code:
        raise SystemExit(code)
    print((args.out / "unit_sweep.csv").read_text(), end="")


if __name__ == "__main__":
    main()
