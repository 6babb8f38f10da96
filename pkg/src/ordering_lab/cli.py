"""Command-line entry point: ``ordlab run | resume | validate | compare | template``.

Exit codes: 0 success, 1 validation failure, 2 config error, 3 numeric
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError
from .config import HOOK_NAMES, ConfigError, ExperimentConfig, desk_config, load_config
from .model import NumericFailure

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4


def _cadences(items: list[str]) -> dict[str, int]:
    out = {}
    for item in items or []:
        name, _, value = item.partition("=")
        if name not in HOOK_NAMES or not value.isdigit():
            raise ConfigError([f"--cadence {item!r}: expected hook=N with hook in {list(HOOK_NAMES)}"])
        out[name] = int(value)
    return out


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.strategy is not None:
        changes["strategy"] = args.strategy
    if args.max_epochs is not None:
        changes["max_epochs"] = args.max_epochs
    if args.eval_subset is not None:
        changes["eval_subset"] = args.eval_subset
    if args.precision is not None:
        changes["model"] = replace(cfg.model, precision=args.precision)
    if args.cadence:
        changes["hooks"] = {**cfg.hooks, **_cadences(args.cadence)}
    cfg = replace(cfg, **changes) if changes else cfg
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def _progress(quiet: bool):
    if quiet:
        return None

    def show(s):
        full = "" if s["val_acc_full"] is None else f" full_test={s['val_acc_full']:.4f}"
        print(f"epoch {s['epoch']:5d} loss={s['loss']:.4f} train={s['train_acc']:.4f} "
              f"test={s['val_acc']:.4f}{full} lr={s['lr']:.3e}", flush=True)
    return show


def cmd_run(args) -> int:
    from .trainer import run_experiment
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    res = run_experiment(cfg, out, progress=_progress(args.quiet))
    print(json.dumps({"run_dir": str(res.run_dir), "status": res.status, "stop_epoch": res.stop_epoch,
                      "epochs_run": res.epochs_run, "final_test_acc": res.final_test_acc}))
    return EXIT_OK


def cmd_resume(args) -> int:
    from .trainer import resume_experiment
    cfg = load_config(args.config) if args.config else None
    res = resume_experiment(Path(args.run_dir), args.checkpoint, cfg, progress=_progress(args.quiet))
    print(json.dumps({"run_dir": str(res.run_dir), "status": res.status, "stop_epoch": res.stop_epoch,
                      "epochs_run": res.epochs_run, "final_test_acc": res.final_test_acc}))
    return EXIT_OK


def cmd_validate(args) -> int:
    from . import validate as V
    if args.what == "oracle-suite":
        checks = V.oracle_suite(include_gradient_check=not args.skip_gradient_check)
        print(V.describe(checks))
        report = [c.to_dict() for c in checks]
        ok = all(c.passed for c in checks)
    else:
        cfg = load_config(args.config) if args.config else desk_config()
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        if args.what == "k-sufficiency":
            if args.k < 3:
                raise ConfigError([f"--k must be >= 3 so that at least four shuffled epochs are compared, got {args.k}"])
            epochs = [int(x) for x in args.checkpoints.split(",")]
            report = V.k_sufficiency(cfg, epochs, args.k)
            for r in report:
                print(f"{'PASS' if r['passed'] else 'FAIL'}  epoch {r['epoch']}: gap={r['norm_gap']:.4f} "
                      f"min_cos={r['min_cosine']:.4f} monotone={r['strictly_monotone']}")
        else:
            strides = [int(x) for x in args.strides.split(",")] if args.strides else [None]
            strides = [s if s is not None else int(cfg.task.p ** 0.5) for s in strides]
            report = V.stride_frequency(cfg, strides, args.epochs)
            for r in report:
                print(f"{'PASS' if r['passed'] else 'FAIL'}  p={r['p']} s={r['stride']}: predicted "
                      f"{r['predicted']}, observed {r['observed']} (stable from epoch {r['stable_from_epoch']}); "
                      f"displacement peak at predicted in {r['delta_epochs_at_predicted']}/{len(r['peaks'])} epochs")
        ok = all(r["passed"] for r in report)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, default=str) + "\n")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_compare(args) -> int:
    from .compare import compare_runs, write_comparison
    rng = None
    if args.epochs:
        lo, _, hi = args.epochs.partition(":")
        rng = (int(lo or 0), int(hi) if hi else 10 ** 9)
    try:
        comp = compare_runs([Path(p) for p in args.runs], args.keys or None, rng)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    written = write_comparison(comp, Path(args.out), plots=not args.no_plots)
    for w in comp.warnings:
        print(f"warning: {w}")
    for key, absent in comp.absent.items():
        for label in absent:
            print(f"absent: {key} in {label}")
    for key, summaries in comp.summaries.items():
        for r, s in zip(comp.runs, summaries):
            if s is not None:
                print(f"{key:45s} {r.label:40s} mean={s['mean']:.5g} min={s['min']:.5g} "
                      f"max={s['max']:.5g} last={s['last']:.5g}")
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def cmd_template(args) -> int:
    cfg = desk_config(args.strategy, args.seed, args.weight_decay)
    sys.stdout.write(cfg.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ordlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("config")
    r.add_argument("--out", help="run directory (default runs/<config stem>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--strategy", choices=["stride", "fixed_random", "random", "target"])
    r.add_argument("--max-epochs", type=int)
    r.add_argument("--eval-subset", type=int)
    r.add_argument("--precision", choices=["f32", "f64"])
    r.add_argument("--cadence", action="append", metavar="HOOK=N", help="hook cadence in epochs (repeatable)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("resume", help="continue a run from a checkpoint")
    s.add_argument("run_dir")
    s.add_argument("--checkpoint", type=int, help="epoch of the checkpoint (default: latest)")
    s.add_argument("--config", help="reject the resume unless this config matches the recorded one")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_resume)

    v = sub.add_parser("validate", help="oracle checks and measurement validations")
    v.add_argument("what", choices=["oracle-suite", "k-sufficiency", "stride-frequency"])
    v.add_argument("--config", help="experiment config (default: the p=97 desk setting)")
    v.add_argument("--seed", type=int)
    v.add_argument("--k", type=int, default=3)
    v.add_argument("--checkpoints", default="0,10,50", help="epochs for k-sufficiency, comma separated")
    v.add_argument("--strides", help="comma separated strides for stride-frequency (default floor(sqrt p))")
    v.add_argument("--epochs", type=int, default=50, help="training epochs for stride-frequency")
    v.add_argument("--skip-gradient-check", action="store_true")
    v.add_argument("--out", help="write the JSON report here")
    v.set_defaults(fn=cmd_validate)

    c = sub.add_parser("compare", help="align metrics of finished runs, write tables and plots")
    c.add_argument("runs", nargs="+")
    c.add_argument("--keys", nargs="*", help="hook:key entries (default: accuracy, entropies, decomposition)")
    c.add_argument("--epochs", help="epoch range lo:hi")
    c.add_argument("--out", default="comparison")
    c.add_argument("--no-plots", action="store_true")
    c.set_defaults(fn=cmd_compare)

    t = sub.add_parser("template", help="print a desk-scale config to start from")
    t.add_argument("--strategy", default="random", choices=["stride", "fixed_random", "random", "target"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--weight-decay", type=float, default=0.1)
    t.set_defaults(fn=cmd_template)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
