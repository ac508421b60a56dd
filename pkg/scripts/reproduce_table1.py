"""Run the four adaptation paths on 0/30/60/90 degree moons and print a markdown table.

    python3 scripts/reproduce_table1.py --seeds 0-9 --workers 4 --out table1.json
"""

import argparse
import json
import time

from bridgeda.cli import parse_seeds
from bridgeda.experiments import table1, table1_markdown
from bridgeda.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="optional path for the JSON table")
    args = ap.parse_args()

    t0 = time.perf_counter()
    table = table1(parse_seeds(args.seeds), TrainConfig(epochs=args.epochs), workers=args.workers)
    print(table1_markdown(table))
    print(f"{time.perf_counter() - t0:.1f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
