"""K-sufficiency along a p=97 desk run: leave-one-out norm gap, cosine and monotonicity."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from ordering_lab.config import desk_config
from ordering_lab.validate import k_sufficiency


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--strategy", default="stride")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--checkpoints", default="0,25,50,100,150,200")
    ap.add_argument("--out", default="results/k_validation.json")
    args = ap.parse_args()
    epochs = [int(x) for x in args.checkpoints.split(",")]
    report = k_sufficiency(desk_config(args.strategy, args.seed), epochs, args.k)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({"strategy": args.strategy, "seed": args.seed, "k": args.k,
                                          "checkpoints": report}, indent=2) + "\n")
    for r in report:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  epoch {r['epoch']}: gap={r['norm_gap']:.4f} "
              f"min_cos={r['min_cosine']:.4f} monotone={r['strictly_monotone']}")


if __name__ == "__main__":
    main()
