"""Target ordering at p=97: test accuracy and consecutive-epoch gradient cosines over the Stride budget.

The budget defaults to the slowest WD=0.1 Stride stop epoch recorded by
``wd_sweep.py`` when that file exists, otherwise 300 epochs.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from ordering_lab.config import desk_config
from ordering_lab.validate import target_failure


def stride_budget(path: Path, fallback: int) -> int:
    if not path.exists():
        return fallback
    runs = json.loads(path.read_text())["runs"]
    stops = [r["stop_epoch"] for r in runs
             if r["strategy"] == "stride" and r["weight_decay"] == 0.1 and r["stop_epoch"] is not None]
    return max(stops) if stops else fallback


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget", type=int)
    ap.add_argument("--sweep", default="results/wd_sweep.json")
    ap.add_argument("--out", default="results/target_failure.json")
    args = ap.parse_args()
    budget = args.budget or stride_budget(Path(args.sweep), 300)
    res = target_failure(desk_config("target", args.seed), budget)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({"seed": args.seed, **res}, indent=2) + "\n")
    print(f"{'PASS' if res['passed'] else 'FAIL'}  budget={budget} max_test_acc={res['max_val_acc']:.4f} "
          f"(chance x3 = {res['chance_threshold']:.4f}) negative cosines={res['negative_fraction']:.2%}")


if __name__ == "__main__":
    main()
