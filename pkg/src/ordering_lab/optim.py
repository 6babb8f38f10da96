"""AdamW with decoupled weight decay, the cosine schedule, and training snapshots."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .model import NumericFailure
from .params import ParameterVector


@dataclass(frozen=True)
class ScheduleSpec:
    lr_max: float = 1e-3
    lr_min: float = 5e-7
    total_epochs: int = 5000

    def validate(self) -> list[str]:
        errors = []
        if not 0 <= self.lr_min <= self.lr_max:
            errors.append(f"schedule: need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.total_epochs < 1:
            errors.append(f"schedule.total_epochs must be >= 1, got {self.total_epochs}")
        return errors


def cosine_lr(epoch: int, spec: ScheduleSpec) -> float:
    """Cosine annealing from lr_max at epoch 0 to lr_min at total_epochs."""
    if not 0 <= epoch <= spec.total_epochs:
        raise ValueError(f"epoch {epoch} outside schedule range [0, {spec.total_epochs}]")
    if epoch == spec.total_epochs:
        return spec.lr_min
    return spec.lr_min + 0.5 * (spec.lr_max - spec.lr_min) * (1.0 + math.cos(math.pi * epoch / spec.total_epochs))


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1

    @classmethod
    def zeros(cls, n: int, dtype=np.float32, **hyper) -> AdamWState:
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), **hyper)

    def copy(self) -> AdamWState:
        return AdamWState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps, self.weight_decay)

    def hyper(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "weight_decay": self.weight_decay}

    def bias_corrected(self) -> tuple[np.ndarray, np.ndarray]:
        if self.t == 0:
            return np.zeros_like(self.m), np.zeros_like(self.v)
        return self.m / (1 - self.beta1 ** self.t), self.v / (1 - self.beta2 ** self.t)


def adamw_step_(params: np.ndarray, grad: np.ndarray, state: AdamWState, lr: float) -> np.ndarray:
    """In-place AdamW step; returns the adaptive update (decay excluded).

    Decay is applied first, as ``theta *= 1 - lr * wd``, then the bias-corrected
    adaptive step. This matches the usual framework ordering.
    """
    if params.shape != grad.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}")
    dt = params.dtype.type
    b1, b2 = state.beta1, state.beta2
    state.t += 1
    state.m *= dt(b1)
    state.m += dt(1 - b1) * grad
    state.v *= dt(b2)
    state.v += dt(1 - b2) * (grad * grad)
    bc1 = 1 - b1 ** state.t
    bc2 = 1 - b2 ** state.t
    denom = np.sqrt(state.v)
    denom /= dt(math.sqrt(bc2))
    denom += dt(state.eps)
    update = state.m / denom
    update *= dt(-lr / bc1)
    if not np.all(np.isfinite(update)):
        raise NumericFailure("non-finite optimizer update")
    if state.weight_decay:
        params *= dt(1 - lr * state.weight_decay)
    params += update
    return update


def adamw_step(params: ParameterVector, grad: ParameterVector, state: AdamWState, lr: float
               ) -> tuple[ParameterVector, AdamWState]:
    """Pure form of :func:`adamw_step_`: inputs are left untouched."""
    new_params, new_state = params.copy(), state.copy()
    adamw_step_(new_params.flat, grad.flat, new_state, lr)
    return new_params, new_state


@dataclass
class TrainingSnapshot:
    """Value-isolated copy of everything that determines future training.

    Random streams are counter-addressed, so their cursors are just the
    (epoch, step) position recorded here.
    """

    params: ParameterVector
    adam: AdamWState
    epoch: int
    step: int
    hook_states: dict = field(default_factory=dict)

    def copy(self) -> TrainingSnapshot:
        return TrainingSnapshot(self.params.copy(), self.adam.copy(), self.epoch, self.step,
                                copy.deepcopy(self.hook_states))

    @property
    def rng_cursors(self) -> dict:
        return {"dropout": [self.epoch, self.step], "shuffle": [self.epoch]}
