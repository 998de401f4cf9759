#!/usr/bin/env python3
"""Print a history CSV as a compact text chart (no plotting dependency).

    python3 scripts/plot_history.py runs/desk/cg3d.ckpt.history.csv
"""

import csv
import sys


def main(path: str, width: int = 50) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        sys.exit(f"{path}: empty history")
    top = max(float(r["train_mse"]) for r in rows)
    print(f"{'epoch':>5}  {'train_mse':>10}  {'val_mse':>10}  {'val_mae':>10}")
    for r in rows:
        bar = "#" * max(1, round(width * float(r["train_mse"]) / top))
        print(f"{r['epoch']:>5}  {float(r['train_mse']):10.5f}  {float(r['val_mse']):10.5f}  {float(r['val_mae']):10.5f}  {bar}")


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    main(sys.argv[1])
