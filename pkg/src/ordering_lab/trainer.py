"""Deterministic training loop, stopping rule, hook orchestration and run artifacts."""

from __future__ import annotations

import hashlib
import json
import platform
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import rng as rngmod
from .checkpoint import CheckpointError, load_arrays, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, config_from_dict
from .counterfactual import KValidationReport, validate_k
from .hooks import Hook, HookContext, StepInfo, build_hooks
from .model import INIT_SCHEME, LN_EPS, NumericFailure, Transformer
from .optim import AdamWState, TrainingSnapshot, adamw_step_, cosine_lr
from .ordering import Orderer, PermutationPlan
from .params import ParameterVector
from .sink import MetricSink
from .task import Dataset, generate_dataset, load_dataset, save_dataset

RUN_FORMAT = "ordlab-run/1"


class RunIOError(IOError):
    pass


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def decision_knobs(cfg: ExperimentConfig) -> dict:
    """Every choice the training math depends on that is not a config field."""
    return {
        "init_scheme": INIT_SCHEME,
        "layernorm_eps": LN_EPS,
        "norm_placement": "pre",
        "pooling": "mean_over_positions",
        "attention_projection_bias": True,
        "dropout_sites": ["attention_probs", "attention_output", "ff_hidden", "ff_output"],
        "schedule_stepping": "per_epoch",
        "schedule_epoch_index": "epoch - 1",
        "weight_decay_scope": "all_segments",
        "weight_decay_order": "decay_then_adaptive",
        "partial_final_batch": "kept",
        "sort_tie_break": "stable_dataset_order",
        "argmax_tie_break": "lowest_index",
        "eval_subset": min(cfg.eval_subset, cfg.task.test_size),
        "stop_rule": "first epoch with full-test accuracy >= target",
        "epoch_gradient": "f64 mean of per-batch pre-step gradients",
        "hvp": "forward difference, eval mode, f64, eps = eps_scale/||v||",
        "counterfactual": "K shuffled epochs from the pre-epoch snapshot, own dropout stream",
        "neuron_spectra": "embedding columns",
        "blas_threads": 1,
    }


@dataclass
class EpochResult:
    mean_grad: np.ndarray
    loss: float
    last_grad: np.ndarray
    last_update: np.ndarray
    last_params_before: np.ndarray
    n_batches: int


@dataclass
class RunResult:
    run_dir: Path | None
    stop_epoch: int | None
    epochs_run: int
    final_test_acc: float
    status: str
    trainer: Trainer


class Trainer:
    """Owns the live training state; everything else gets copies."""

    def __init__(self, config: ExperimentConfig, dataset: Dataset | None = None, hooks: list[Hook] | None = None,
                 sink: MetricSink | None = None, reference: np.ndarray | None = None):
        errors = config.validate()
        if errors:
            raise ConfigError(errors)
        self.config = config
        self.dataset = dataset if dataset is not None else generate_dataset(config.task)
        self.model = Transformer(config.model)
        self.probe_model = Transformer(replace(config.model, precision="f64"))
        self.layout = self.model.layout
        self.params = self.model.init(config.master_seed)
        self.adam = AdamWState.zeros(self.layout.size, self.params.dtype, beta1=config.optimizer.beta1,
                                     beta2=config.optimizer.beta2, eps=config.optimizer.eps,
                                     weight_decay=config.optimizer.weight_decay)
        self.epoch = 0
        self.step = 0
        self.orderer = Orderer(config.strategy, self.dataset.train, config.batch_size, config.master_seed,
                               config.stride)
        self.hooks = hooks if hooks is not None else build_hooks(config)
        self.sink = sink if sink is not None else MetricSink(None)
        self.reference = None if reference is None else np.asarray(reference, dtype=np.float64)
        tr = self.dataset.train
        self._train = (tr.a, tr.b, tr.labels)
        te = self.dataset.test
        self._test = (te.a, te.b, te.labels)
        self.eval_rows = self._eval_subset()
        self._attached = False

    # -- state -------------------------------------------------------------

    def _eval_subset(self) -> np.ndarray:
        n = len(self.dataset.test)
        k = min(self.config.eval_subset, n)
        if k == n:
            return np.arange(n)
        return np.sort(rngmod.sample_without_replacement(n, k, rngmod.stream(self.config.master_seed, "eval_subset")))

    def attach_hooks(self) -> None:
        if not self._attached:
            for h in self.hooks:
                h.attach(self)
            self._attached = True

    def snapshot(self, include_hooks: bool = False) -> TrainingSnapshot:
        states = {h.name: h.state_dict() for h in self.hooks} if include_hooks else {}
        snap = TrainingSnapshot(self.params.copy(), self.adam.copy(), self.epoch, self.step, {})
        if include_hooks:
            snap = TrainingSnapshot(snap.params, snap.adam, snap.epoch, snap.step, states).copy()
        return snap

    def restore(self, snap: TrainingSnapshot, include_hooks: bool = False) -> None:
        # copy into the live buffers so outstanding views stay valid
        np.copyto(self.params.flat, snap.params.flat)
        np.copyto(self.adam.m, snap.adam.m)
        np.copyto(self.adam.v, snap.adam.v)
        self.adam.t = snap.adam.t
        self.epoch = snap.epoch
        self.step = snap.step
        if include_hooks:
            for h in self.hooks:
                h.load_state_dict(snap.hook_states.get(h.name, {}))
            self._attached = False

    @contextmanager
    def isolated(self):
        """Snapshot on entry, restore on exit (also when the body raises)."""
        snap = self.snapshot()
        try:
            yield
        finally:
            self.restore(snap)

    def with_isolated_state(self, fn):
        with self.isolated():
            return fn()

    def lr_for_epoch(self, epoch: int) -> float:
        return cosine_lr(epoch - 1, self.config.schedule)

    def orderer_n_batches(self) -> int:
        return -(-len(self.dataset.train) // self.config.batch_size)

    # -- core loop ---------------------------------------------------------

    def train_epoch(self, params: ParameterVector, adam: AdamWState, plan: PermutationPlan, lr: float,
                    dropout_label: str, counters: tuple, step_hooks=(), global_step: int = 0) -> EpochResult:
        """One pass over ``plan`` mutating ``params`` and ``adam`` in place."""
        a, b, y = self._train
        acc = np.zeros(self.layout.size, dtype=np.float64)
        grad_buf = np.empty(self.layout.size, dtype=params.dtype)
        want_before = any(h.needs_step_params_before for h in step_hooks)
        n = plan.n_batches
        loss_sum = 0.0
        last_grad = last_update = last_before = None
        seed = self.config.master_seed
        for i, idx in enumerate(plan.batches()):
            gen = rngmod.stream(seed, dropout_label, *counters, i)
            loss, grad = self.model.loss_and_grad(params, a[idx], b[idx], y[idx], gen, grad_out=grad_buf)
            acc += grad.flat
            loss_sum += loss
            before = params.flat.copy() if (want_before or i == n - 1) else None
            update = adamw_step_(params.flat, grad.flat, adam, lr)
            if i == n - 1:
                last_grad, last_update, last_before = grad.flat.copy(), update, before
            if step_hooks:
                info = StepInfo(counters[0], i, global_step + i, plan, grad.flat, params, before, update, lr, loss)
                for h in step_hooks:
                    h.after_step(self, info)
        return EpochResult(acc / n, loss_sum / n, last_grad, last_update, last_before, n)

    def shuffled_epoch_gradient(self, snap: TrainingSnapshot, epoch: int, k: int, label: str) -> np.ndarray:
        """Mean gradient of a shuffled epoch trained from ``snap``; state untouched."""
        params, adam = snap.params.copy(), snap.adam.copy()
        order = rngmod.permutation(len(self.dataset.train), rngmod.stream(self.config.master_seed, label, epoch, k))
        plan = PermutationPlan(order, self.config.batch_size, epoch, "random")
        res = self.train_epoch(params, adam, plan, self.lr_for_epoch(epoch), label + "/dropout", (epoch, k))
        return res.mean_grad

    def probe_grad_fn(self, rows: np.ndarray):
        """Eval-mode float64 gradient of the loss on ``rows`` as a function of flat params."""
        a, b, y = (arr[rows] for arr in self._train)

        def grad_fn(theta: np.ndarray) -> np.ndarray:
            pv = ParameterVector(self.layout, np.asarray(theta, dtype=np.float64))
            return self.probe_model.loss_and_grad(pv, a, b, y)[1].flat
        return grad_fn

    def evaluate(self) -> tuple[float, float]:
        a, b, y = self._train
        train_acc = self.model.accuracy(self.params, a, b, y)
        a, b, y = self._test
        r = self.eval_rows
        return train_acc, self.model.accuracy(self.params, a[r], b[r], y[r])

    def full_test_accuracy(self) -> float:
        a, b, y = self._test
        return self.model.accuracy(self.params, a, b, y)

    def run_epoch(self) -> dict:
        """Train one epoch, evaluate, run hooks. Returns the epoch summary."""
        self.attach_hooks()
        e = self.epoch + 1
        if e > self.config.schedule.total_epochs:
            raise ValueError(f"epoch {e} is past the end of the schedule")
        plan = self.orderer.plan(e)
        lr = self.lr_for_epoch(e)
        active = {h.name: h.active(e) for h in self.hooks}
        pre = self.snapshot() if any(h.needs_pre_snapshot and active[h.name] for h in self.hooks) else None
        theta_prev = self.params.flat.astype(np.float64)
        for h in self.hooks:
            h.begin_epoch(self, e, active[h.name])
        step_hooks = [h for h in self.hooks if h.needs_steps]
        res = self.train_epoch(self.params, self.adam, plan, lr, "dropout", (e,), step_hooks, self.step)
        self.epoch = e
        self.step += res.n_batches

        train_acc, val_acc = self.evaluate()
        full = None
        if self.config.full_test_every_epoch or val_acc >= self.config.target_accuracy:
            full = val_acc if len(self.eval_rows) == len(self.dataset.test) else self.full_test_accuracy()
        ctx = HookContext(
            epoch=e, trainer=self, plan=plan, lr=lr, params=self.params, theta_prev=theta_prev,
            epoch_grad=res.mean_grad, loss=res.loss, train_acc=train_acc, val_acc=val_acc, val_acc_full=full,
            last_grad=res.last_grad, last_update=res.last_update, last_params_before=res.last_params_before,
            pre_snapshot=pre, reference=self.reference,
        )
        for h in self.hooks:
            row = self.with_isolated_state(lambda h=h: h.end_epoch(ctx, active[h.name]))
            if row is not None:
                self.sink.emit(h.name, e, row)
            for stream_name, rows in h.extra_rows().items():
                for r in rows:
                    self.sink.emit(stream_name, e, r)
        stop = full is not None and full >= self.config.target_accuracy
        return {"epoch": e, "loss": res.loss, "train_acc": train_acc, "val_acc": val_acc, "val_acc_full": full,
                "stop": stop, "lr": lr}

    def k_validation(self, k: int = 3, label: str = "hook/k_validation") -> KValidationReport:
        """K+1 shuffled epochs from the current state, compared leave-one-out."""
        snap = self.snapshot()
        e = self.epoch + 1
        means = [self.shuffled_epoch_gradient(snap, e, j, label) for j in range(k + 1)]
        return validate_k(means)


# -- run directories -------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise RunIOError(f"{path}: {exc}") from exc


def build_manifest(cfg: ExperimentConfig, trainer: Trainer) -> dict:
    return {
        "format": RUN_FORMAT,
        "config": cfg.to_dict(),
        "config_sha256": config_digest(cfg),
        "code_version": __version__,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "machine": platform.machine()},
        "decisions": decision_knobs(cfg),
        "dataset_sha256": trainer.dataset.fingerprint(),
        "layout": trainer.layout.to_json(),
        "n_params": trainer.layout.size,
        "status": "running",
        "stop_epoch": None,
        "epochs_run": 0,
    }


def _load_reference(path: str | None) -> np.ndarray | None:
    if path is None:
        return None
    arrays, _ = load_arrays(Path(path))
    return arrays["params"].astype(np.float64)


def _checkpoint(trainer: Trainer, run_dir: Path, name: str) -> None:
    meta = {"config_sha256": config_digest(trainer.config)}
    try:
        save_checkpoint(run_dir / name, trainer.snapshot(include_hooks=True), meta)
    except OSError as exc:
        raise RunIOError(f"{run_dir / name}: {exc}") from exc


def _loop(trainer: Trainer, run_dir: Path | None, manifest: dict | None, flush_every: int = 10,
          progress=None) -> RunResult:
    cfg = trainer.config
    stop_epoch = None
    status = "max_epochs"
    try:
        with threadpool_limits(1):
            while trainer.epoch < cfg.max_epochs:
                summary = trainer.run_epoch()
                e = summary["epoch"]
                if progress is not None:
                    progress(summary)
                if summary["stop"]:
                    stop_epoch = e
                    status = "target_reached"
                    break
                if run_dir is not None:
                    if e % cfg.checkpoint_every == 0:
                        trainer.sink.flush()
                        _checkpoint(trainer, run_dir, f"checkpoints/{e}")
                    elif e % flush_every == 0:
                        trainer.sink.flush()
            final_acc = trainer.full_test_accuracy()
    except NumericFailure as exc:
        trainer.sink.flush()
        if manifest is not None:
            manifest.update({"status": "numeric_failure", "error": str(exc), "epochs_run": trainer.epoch})
            _write_json(run_dir / "manifest.json", manifest)
        raise
    trainer.sink.flush()
    if run_dir is not None:
        _checkpoint(trainer, run_dir, "final-model")
        manifest.update({"status": status, "stop_epoch": stop_epoch, "epochs_run": trainer.epoch,
                         "final_test_acc": final_acc})
        _write_json(run_dir / "manifest.json", manifest)
    return RunResult(run_dir, stop_epoch, trainer.epoch, final_acc, status, trainer)


def run_experiment(cfg: ExperimentConfig, run_dir: Path | None = None, hooks: list[Hook] | None = None,
                   progress=None) -> RunResult:
    """Train until the full test set reaches the target or ``max_epochs``.

    With ``run_dir`` the run writes its manifest, dataset, metric streams,
    periodic checkpoints (epoch 0 included) and the final model.
    """
    reference = _load_reference(cfg.reference_params)
    if run_dir is None:
        trainer = Trainer(cfg, hooks=hooks, reference=reference)
        trainer.attach_hooks()
        return _loop(trainer, None, None, progress=progress)
    run_dir = Path(run_dir)
    if (run_dir / "manifest.json").exists():
        raise RunIOError(f"{run_dir}: already holds a run; use resume or choose another directory")
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RunIOError(f"{run_dir}: {exc}") from exc
    dataset = generate_dataset(cfg.task)
    save_dataset(dataset, run_dir / "dataset")
    sink = MetricSink(run_dir / "metrics")
    trainer = Trainer(cfg, dataset=dataset, hooks=hooks, sink=sink, reference=reference)
    trainer.attach_hooks()
    manifest = build_manifest(cfg, trainer)
    _write_json(run_dir / "manifest.json", manifest)
    _checkpoint(trainer, run_dir, "checkpoints/0")
    return _loop(trainer, run_dir, manifest, progress=progress)


def list_checkpoints(run_dir: Path) -> list[int]:
    d = Path(run_dir) / "checkpoints"
    return sorted(int(p.name) for p in d.iterdir() if p.name.isdigit()) if d.exists() else []


def resume_experiment(run_dir: Path, checkpoint: int | None = None, config: ExperimentConfig | None = None,
                      progress=None) -> RunResult:
    """Continue a run from a checkpoint; the result matches an uninterrupted run."""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text())
    except OSError as exc:
        raise RunIOError(f"{run_dir / 'manifest.json'}: {exc}") from exc
    stored = config_from_dict(manifest["config"])
    if config is not None and config_digest(config) != config_digest(stored):
        raise CheckpointError(f"{run_dir}: config differs from the one recorded in the manifest")
    cfg = stored
    available = list_checkpoints(run_dir)
    if not available:
        raise CheckpointError(f"{run_dir}: no checkpoints")
    epoch = available[-1] if checkpoint is None else checkpoint
    if epoch not in available:
        raise CheckpointError(f"{run_dir}: no checkpoint for epoch {epoch}; have {available}")
    dataset = load_dataset(run_dir / "dataset")
    if dataset.fingerprint() != manifest["dataset_sha256"]:
        raise CheckpointError(f"{run_dir}: dataset does not match the manifest")
    sink = MetricSink(run_dir / "metrics")
    trainer = Trainer(cfg, dataset=dataset, sink=sink, reference=_load_reference(cfg.reference_params))
    snap, meta = load_checkpoint(run_dir / "checkpoints" / str(epoch), trainer.layout)
    if meta.get("config_sha256") != config_digest(cfg):
        raise CheckpointError(f"{run_dir}: checkpoint {epoch} was written under a different config")
    trainer.restore(snap, include_hooks=True)
    trainer.attach_hooks()
    sink.truncate_after(epoch)
    for stale in available:
        if stale > epoch:
            shutil.rmtree(run_dir / "checkpoints" / str(stale))
    manifest.update({"status": "running", "stop_epoch": None, "epochs_run": epoch})
    manifest.pop("final_test_acc", None)
    manifest.pop("error", None)
    _write_json(run_dir / "manifest.json", manifest)
    return _loop(trainer, run_dir, manifest, progress=progress)
