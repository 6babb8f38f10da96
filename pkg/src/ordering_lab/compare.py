"""Read-only comparison of finished runs: aligned tables, summaries and SVG plots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sink import read_jsonl

DEFAULT_KEYS = (
    "training_metrics:val_acc",
    "fourier:spectral_entropy",
    "fourier:decoder_spectral_entropy",
    "fourier:neuron_fourier_entropy",
    "counterfactual:content_component_norm",
    "counterfactual:ordering_component_norm",
    "counterfactual:ordering_alignment",
)


@dataclass
class Run:
    path: Path
    manifest: dict
    streams: dict[str, list[dict]]

    @property
    def label(self) -> str:
        cfg = self.manifest.get("config", {})
        return f"{self.path.name} ({cfg.get('strategy', '?')}, seed {cfg.get('master_seed', '?')})"

    def series(self, hook: str, key: str) -> dict[int, float] | None:
        rows = self.streams.get(hook)
        if not rows or not any(key in r for r in rows):
            return None
        # streams with several rows per epoch (e.g. per-step probes) are averaged
        acc: dict[int, list[float]] = {}
        for r in rows:
            v = r.get(key)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                acc.setdefault(r["epoch"], []).append(float(v))
        return {e: float(np.mean(v)) for e, v in sorted(acc.items())}


def load_run(path: Path) -> Run:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    streams = {p.stem: read_jsonl(p) for p in sorted((path / "metrics").glob("*.jsonl"))}
    return Run(path, manifest, streams)


@dataclass
class Comparison:
    runs: list[Run]
    tables: dict[str, dict[int, list[float | None]]] = field(default_factory=dict)
    summaries: dict[str, list[dict | None]] = field(default_factory=dict)
    absent: dict[str, list[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _parse_key(key: str) -> tuple[str, str]:
    if ":" not in key:
        raise ValueError(f"metric key {key!r} must look like hook:key")
    hook, name = key.split(":", 1)
    return hook, name


def compare_runs(paths: list[Path], keys: list[str] | None = None, epoch_range: tuple[int, int] | None = None
                 ) -> Comparison:
    runs = [load_run(p) for p in paths]
    comp = Comparison(runs)
    ps = {r.manifest.get("config", {}).get("task", {}).get("p") for r in runs}
    if len(ps) > 1:
        comp.warnings.append(f"runs use different moduli p: {sorted(x for x in ps if x is not None)}")
    for key in keys or DEFAULT_KEYS:
        hook, name = _parse_key(key)
        per_run = [r.series(hook, name) for r in runs]
        comp.absent[key] = [r.label for r, s in zip(runs, per_run) if s is None]
        epochs = sorted({e for s in per_run if s for e in s})
        if epoch_range is not None:
            epochs = [e for e in epochs if epoch_range[0] <= e <= epoch_range[1]]
        comp.tables[key] = {e: [None if s is None else s.get(e) for s in per_run] for e in epochs}
        summaries = []
        for s in per_run:
            vals = [s[e] for e in epochs if s is not None and e in s]
            summaries.append(None if not vals else {
                "mean": float(np.mean(vals)), "min": float(np.min(vals)), "max": float(np.max(vals)),
                "first_epoch": epochs[0] if epochs else None, "last": vals[-1], "n": len(vals)})
        comp.summaries[key] = summaries
    return comp


def _slug(key: str) -> str:
    return key.replace(":", "__").replace("/", "_")


def write_comparison(comp: Comparison, out_dir: Path, plots: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    labels = [r.label for r in comp.runs]
    for key, table in comp.tables.items():
        path = out_dir / f"{_slug(key)}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", *labels])
            for e, vals in table.items():
                w.writerow([e, *["" if v is None else repr(v) for v in vals]])
        written.append(path)
    summary = {"runs": labels, "warnings": comp.warnings, "absent": comp.absent,
               "summaries": {k: dict(zip(labels, v)) for k, v in comp.summaries.items()}}
    spath = out_dir / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(spath)
    if plots:
        written += _plot(comp, out_dir)
    return written


def _plot(comp: Comparison, out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # a fixed salt makes the clip-path ids, and so the SVG bytes, reproducible
    with matplotlib.rc_context({"svg.hashsalt": "ordering-lab"}):
        return _plot_tables(comp, out_dir, plt)


def _plot_tables(comp: Comparison, out_dir: Path, plt) -> list[Path]:

    paths = []
    labels = [r.label for r in comp.runs]
    for key, table in comp.tables.items():
        if not table:
            continue
        fig, ax = plt.subplots(figsize=(7, 4))
        epochs = np.array(list(table))
        vals = np.array([[np.nan if v is None else v for v in row] for row in table.values()], dtype=float)
        for j, label in enumerate(labels):
            if np.all(np.isnan(vals[:, j])):
                continue
            ax.plot(epochs, vals[:, j], label=label, linewidth=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel(key.split(":", 1)[1])
        ax.set_title(key)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"{_slug(key)}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
