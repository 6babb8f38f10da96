"""Weight-decay ablation at p=97: Stride, Fixed-Random and Random over 5 seeds and 3 WDs.

Results are appended to a JSON file after every run, so an interrupted sweep
picks up where it stopped. Usage::

    python3 scripts/wd_sweep.py --out results/wd_sweep.json
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from ordering_lab.config import desk_config
from ordering_lab.trainer import run_experiment
from ordering_lab.validate import wd_sweep_summary

STRATEGIES = ("stride", "fixed_random", "random")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/wd_sweep.json")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--weight-decays", default="0.1,0.05,0.01")
    ap.add_argument("--max-epochs", type=int, default=3000)
    ap.add_argument("--run-root", help="keep full run directories here (default: metrics only in memory)")
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data = json.loads(out.read_text()) if out.exists() else {"runs": []}
    done = {(r["strategy"], r["seed"], r["weight_decay"]) for r in data["runs"]}

    for wd in [float(x) for x in args.weight_decays.split(",")]:
        for seed in [int(x) for x in args.seeds.split(",")]:
            for strategy in STRATEGIES:
                if (strategy, seed, wd) in done:
                    continue
                cfg = desk_config(strategy, seed, wd, max_epochs=args.max_epochs)
                run_dir = Path(args.run_root) / f"{strategy}-wd{wd}-s{seed}" if args.run_root else None
                t0 = time.time()
                res = run_experiment(cfg, run_dir)
                row = {"strategy": strategy, "seed": seed, "weight_decay": wd, "stop_epoch": res.stop_epoch,
                       "epochs_run": res.epochs_run, "status": res.status, "final_test_acc": res.final_test_acc,
                       "seconds": round(time.time() - t0, 1)}
                data["runs"].append(row)
                data["summary"] = wd_sweep_summary(data["runs"])
                tmp = out.with_suffix(".tmp")
                tmp.write_text(json.dumps(data, indent=2) + "\n")
                tmp.replace(out)
                print(json.dumps(row), flush=True)
    print(json.dumps(wd_sweep_summary(data["runs"]), indent=2))


if __name__ == "__main__":
    main()
