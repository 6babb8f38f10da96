"""Stride runs at p=97: per-epoch peak embedding frequency against round(p/s)."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from ordering_lab.config import desk_config
from ordering_lab.validate import stride_frequency


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--strides", default="9")
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--out", default="results/stride_frequency.json")
    args = ap.parse_args()
    strides = [int(s) for s in args.strides.split(",")]
    report = stride_frequency(desk_config("stride", args.seed), strides, args.epochs)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({"seed": args.seed, "epochs": args.epochs, "runs": report}, indent=2) + "\n")
    for r in report:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  s={r['stride']}: predicted {r['predicted']}, "
              f"final peak {r['observed']}, stable from epoch {r['stable_from_epoch']}; displacement peak "
              f"at predicted in {r['delta_epochs_at_predicted']}/{len(r['peaks'])} epochs")


if __name__ == "__main__":
    main()
