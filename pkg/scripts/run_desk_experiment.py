#!/usr/bin/env python3
"""Desk-scale experiment: synthetic data -> dataset -> CG3D training -> evaluation.

With --compare the two single-branch baselines are trained as well and the
four-row comparison report (including the MC dropout row) is written.

    python3 scripts/run_desk_experiment.py --out runs/desk
    python3 scripts/run_desk_experiment.py --out runs/desk --compare --seed 3
"""

import argparse
import sys
import time
from pathlib import Path

from skytrace.cli import main as skytrace

HERE = Path(__file__).resolve().parent


def step(*argv) -> None:
    start = time.perf_counter()
    code = skytrace([str(a) for a in argv])
    if code != 0:
        sys.exit(code)
    print(f"[{argv[0]} done in {time.perf_counter() - start:.1f} s]", flush=True)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk", help="output directory")
    p.add_argument("--config", default=str(HERE / "desk.cfg"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--compare", action="store_true", help="also train the baselines and write report.json")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    common = ["--config", args.config, "--seed", args.seed]
    epochs = ["--epochs", args.epochs] if args.epochs else []

    step("synth", *common, "--out", out / "raw.csv")
    step("ingest", *common, out / "raw.csv", "--out", out / "store.csv")
    step("preprocess", *common, out / "store.csv", "--out", out / "dataset.bin")
    step("train", *common, *epochs, out / "dataset.bin", "--out", out / "cg3d.ckpt")
    step("evaluate", *common, out / "cg3d.ckpt", out / "dataset.bin", "--mc-samples", 50, "--out", out / "metrics.json")
    if args.compare:
        step("compare", *common, *epochs, out / "dataset.bin", "--out", out / "report.json", "--quiet")


if __name__ == "__main__":
    main()
