"""Instrumentation hooks.

A hook is told about every epoch (so running state such as the previous
gradient or the path length stays correct regardless of cadence) but only
emits a row on its active epochs: ``(epoch - 1) % cadence == 0``. Hooks that
need per-step data set ``needs_steps`` and receive :class:`StepInfo` after
each optimizer step. Nothing a hook does may change training: the trainer
runs ``end_epoch`` under state isolation and hooks draw randomness only from
their own named streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from . import spectral as S
from .counterfactual import Decomposition, decompose
from .hessian import EntanglementStep, burst_length, entanglement_step, summarize_burst
from .ordering import PermutationPlan
from .params import ParameterVector


@dataclass
class StepInfo:
    epoch: int
    index: int
    global_step: int
    plan: PermutationPlan
    grad: np.ndarray
    params: ParameterVector
    params_before: np.ndarray | None
    update: np.ndarray
    lr: float
    loss: float


@dataclass
class HookContext:
    epoch: int
    trainer: object
    plan: PermutationPlan
    lr: float
    params: ParameterVector
    theta_prev: np.ndarray
    epoch_grad: np.ndarray
    loss: float
    train_acc: float
    val_acc: float
    val_acc_full: float | None
    last_grad: np.ndarray
    last_update: np.ndarray
    last_params_before: np.ndarray
    pre_snapshot: object | None = None
    reference: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


class Hook:
    name = "hook"
    needs_steps = False
    needs_step_params_before = False
    needs_pre_snapshot = False

    def __init__(self, cadence: int = 1):
        if cadence < 1:
            raise ValueError(f"{self.name}: cadence must be >= 1")
        self.cadence = cadence

    def active(self, epoch: int) -> bool:
        return (epoch - 1) % self.cadence == 0

    def attach(self, trainer) -> None:
        """Called once with the trainer at its initial state."""

    def begin_epoch(self, trainer, epoch: int, active: bool) -> None:
        pass

    def after_step(self, trainer, info: StepInfo) -> None:
        pass

    def end_epoch(self, ctx: HookContext, active: bool) -> dict | list[dict] | None:
        return None

    def extra_rows(self) -> dict[str, list[dict]]:
        """Additional streams written alongside the hook's own row."""
        return {}

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class TrainingMetricsHook(Hook):
    name = "training_metrics"

    def end_epoch(self, ctx, active):
        if not active:
            return None
        return {
            "loss": ctx.loss,
            "train_acc": 100.0 * ctx.train_acc,
            "val_acc": 100.0 * ctx.val_acc,
            "val_acc_full": None if ctx.val_acc_full is None else 100.0 * ctx.val_acc_full,
            "lr": ctx.lr,
            "perplexity": math.exp(ctx.loss) if ctx.loss < 700 else None,
        }


class NormsHook(Hook):
    name = "norms"

    def end_epoch(self, ctx, active):
        return M.grad_norm_metrics(ctx.epoch_grad, ctx.params.layout) if active else None


class ConsecutiveHook(Hook):
    """Cosine between consecutive epoch-mean gradients."""

    name = "consecutive"

    def __init__(self, cadence: int = 1):
        super().__init__(cadence)
        self.prev: np.ndarray | None = None

    def end_epoch(self, ctx, active):
        row = None
        if active and self.prev is not None:
            row = M.consecutive_cossim(ctx.epoch_grad, self.prev)
        self.prev = np.asarray(ctx.epoch_grad, dtype=np.float64).copy()
        return row

    def state_dict(self):
        return {} if self.prev is None else {"prev": self.prev}

    def load_state_dict(self, state):
        self.prev = None if "prev" not in state else np.asarray(state["prev"], dtype=np.float64)


class FourierHook(Hook):
    name = "fourier"

    def __init__(self, cadence: int = 1, stride: int | None = None):
        super().__init__(cadence)
        self.tracker = S.SignificanceTracker()
        self.stride = stride

    def end_epoch(self, ctx, active):
        if not active:
            return None
        emb = ctx.params["token_embedding"]
        dec = ctx.params["decoder.weight"].T
        return S.fourier_metrics(emb, dec, self.tracker, self.stride)

    def state_dict(self):
        return self.tracker.state_dict()

    def load_state_dict(self, state):
        if state:
            self.tracker.load_state_dict(state)


class WeightTrackingHook(Hook):
    name = "weight_tracking"

    def end_epoch(self, ctx, active):
        return M.weight_tracking(ctx.params.flat, ctx.epoch_grad, ctx.params.layout) if active else None


class ParameterDeltaHook(Hook):
    name = "parameter_delta"

    def end_epoch(self, ctx, active):
        return M.parameter_delta(ctx.params.flat, ctx.theta_prev) if active else None


class PathLengthHook(Hook):
    name = "path_length"

    def __init__(self, cadence: int = 1):
        super().__init__(cadence)
        self.tracker: M.PathTracker | None = None

    def attach(self, trainer):
        if self.tracker is None:
            self.tracker = M.PathTracker(trainer.params.flat)

    def end_epoch(self, ctx, active):
        row = self.tracker.update(ctx.params.flat)
        return row if active else None

    def state_dict(self):
        return {} if self.tracker is None else self.tracker.state_dict()

    def load_state_dict(self, state):
        self.tracker = M.PathTracker.from_state(state) if state else None


class GradientProjectionHook(Hook):
    """Epoch gradient and displacement against the direction to a reference solution."""

    name = "gradient_projection"

    def end_epoch(self, ctx, active):
        if not active or ctx.reference is None:
            return None
        layout = ctx.params.layout
        disp = np.asarray(ctx.params.flat, dtype=np.float64) - ctx.theta_prev
        row = M.projection_to_solution(ctx.epoch_grad, ctx.theta_prev, ctx.reference, layout, True, "grad")
        row.update(M.projection_to_solution(disp, ctx.theta_prev, ctx.reference, layout, False, "disp"))
        row["displacement_norm"] = M.norm(disp)
        row["distance_to_reference"] = M.norm(ctx.reference - np.asarray(ctx.params.flat, dtype=np.float64))
        return row


class BatchDynamicsHook(Hook):
    """Window of the last 50 per-batch gradients, pushed every step."""

    name = "batch_dynamics"
    needs_steps = True

    def __init__(self, cadence: int = 1, capacity: int = 50):
        super().__init__(cadence)
        self.capacity = capacity
        self.window: M.GradientWindow | None = None
        self._pending_state: dict | None = None

    def attach(self, trainer):
        size = trainer.layout.size
        if self._pending_state is not None:
            self.window = M.GradientWindow.from_state(self._pending_state, size)
            self._pending_state = None
        elif self.window is None:
            self.window = M.GradientWindow(size, self.capacity)

    def after_step(self, trainer, info):
        self.window.push(info.global_step, info.grad)

    def end_epoch(self, ctx, active):
        return M.batch_dynamics(self.window) if active else None

    def state_dict(self):
        return {} if self.window is None else self.window.state_dict()

    def load_state_dict(self, state):
        self.window = None
        self._pending_state = state or None


class AdamDynamicsHook(Hook):
    """Optimizer introspection at the epoch's last step."""

    name = "adam_dynamics"

    def end_epoch(self, ctx, active):
        if not active:
            return None
        adam = ctx.trainer.adam
        _, v_hat = adam.bias_corrected()
        return M.adam_introspect(adam.m, v_hat, ctx.last_grad, ctx.last_update, ctx.lr, adam.eps,
                                 ctx.last_params_before, ctx.reference)


class HessianHook(Hook):
    """Entanglement burst over the first steps of an active epoch.

    After real step i (batch A = batch i) the probe evaluates batch B = batch
    i+1 at the post-step parameters, in eval mode and float64, so the
    optimizer trajectory is untouched.
    """

    name = "hessian"
    needs_steps = True

    def __init__(self, cadence: int = 10, length: int = 10, probe: str = "lr_grad", eps_scale: float = 1e-4):
        super().__init__(cadence)
        self.length = length
        self.probe = probe
        self.eps_scale = eps_scale
        self.needs_step_params_before = probe == "displacement"
        self.steps: list[EntanglementStep] = []
        self.step_rows: list[dict] = []
        self._on = False
        self._n = 0

    def begin_epoch(self, trainer, epoch, active):
        self.steps, self.step_rows = [], []
        self._on = active
        self._n = burst_length(trainer.orderer_n_batches(), self.length) if active else 0

    def after_step(self, trainer, info):
        if not self._on or info.index >= self._n:
            return
        b_idx = info.plan.batch(info.index + 1)
        grad_fn = trainer.probe_grad_fn(b_idx)
        theta_after = np.asarray(info.params.flat, dtype=np.float64)
        disp = None
        if self.probe == "displacement":
            disp = theta_after - np.asarray(info.params_before, dtype=np.float64)
        prev_e = self.steps[-1].e if self.steps else None
        st = entanglement_step(grad_fn, info.grad, theta_after, info.lr, info.params.layout, prev_e, disp,
                               self.eps_scale, trainer.reference)
        self.steps.append(st)
        self.step_rows.append({"burst_step": info.index, "global_step": info.global_step, **st.metrics})

    def end_epoch(self, ctx, active):
        if not active:
            return None
        row = summarize_burst(self.steps)
        row["probe"] = self.probe
        return row

    def extra_rows(self):
        return {"hessian_steps": self.step_rows} if self._on else {}


class CounterfactualHook(Hook):
    """K shuffled epochs from the pre-epoch snapshot; decompose the actual epoch gradient."""

    name = "counterfactual"
    needs_pre_snapshot = True

    def __init__(self, cadence: int = 10, k: int = 3):
        super().__init__(cadence)
        self.k = k
        self.last: Decomposition | None = None

    def end_epoch(self, ctx, active):
        if not active:
            return None
        tr = ctx.trainer
        shuffled = [tr.shuffled_epoch_gradient(ctx.pre_snapshot, ctx.epoch, k, "hook/counterfactual")
                    for k in range(self.k)]
        d = decompose(ctx.epoch_grad, shuffled, ctx.params.layout)
        self.last = d
        row = {"k": self.k}
        row.update(d.metrics(ctx.theta_prev, ctx.reference))
        row["energy_identity_residual"] = d.energy_residual()
        return row


HOOK_CLASSES = {cls.name: cls for cls in (
    TrainingMetricsHook, NormsHook, ConsecutiveHook, FourierHook, WeightTrackingHook, ParameterDeltaHook,
    PathLengthHook, GradientProjectionHook, BatchDynamicsHook, AdamDynamicsHook, HessianHook,
    CounterfactualHook,
)}


def build_hooks(config) -> list[Hook]:
    """Instantiate the hooks named in ``config.hooks``; training_metrics is always present."""
    cadences = dict(config.hooks)
    cadences.setdefault("training_metrics", 1)
    hooks = []
    for name in HOOK_CLASSES:
        if name not in cadences:
            continue
        c = cadences[name]
        if name == "hessian":
            h = config.hessian
            hooks.append(HessianHook(c, h.burst_length, h.probe, h.eps_scale))
        elif name == "counterfactual":
            hooks.append(CounterfactualHook(c, config.counterfactual_k))
        elif name == "fourier":
            hooks.append(FourierHook(c, config.stride))
        else:
            hooks.append(HOOK_CLASSES[name](c))
    return hooks
