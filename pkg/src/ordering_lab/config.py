"""Experiment configuration: nested dataclasses parsed strictly from JSON.

Unknown keys and wrongly typed values are errors, and every problem in a file
is reported at once rather than the first one only.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import ModelConfig
from .optim import ScheduleSpec
from .ordering import STRATEGIES
from .task import TaskSpec

HOOK_NAMES = (
    "training_metrics", "norms", "consecutive", "fourier", "weight_tracking", "gradient_projection",
    "parameter_delta", "path_length", "batch_dynamics", "hessian", "counterfactual", "adam_dynamics",
)

DEFAULT_CADENCES = {
    "training_metrics": 1, "norms": 1, "consecutive": 1, "fourier": 1, "weight_tracking": 1,
    "parameter_delta": 1, "path_length": 1, "batch_dynamics": 1, "adam_dynamics": 1,
    "gradient_projection": 1, "hessian": 10, "counterfactual": 10,
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class OptimizerConfig:
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> list[str]:
        errors = []
        if self.weight_decay < 0:
            errors.append(f"optimizer.weight_decay must be >= 0, got {self.weight_decay}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                errors.append(f"optimizer.{name} must lie in [0, 1), got {v}")
        if self.eps <= 0:
            errors.append(f"optimizer.eps must be > 0, got {self.eps}")
        return errors


@dataclass(frozen=True)
class HessianConfig:
    burst_length: int = 10
    probe: str = "lr_grad"
    eps_scale: float = 1e-4

    def validate(self) -> list[str]:
        errors = []
        if self.burst_length < 1:
            errors.append(f"hessian.burst_length must be >= 1, got {self.burst_length}")
        if self.probe not in ("lr_grad", "displacement"):
            errors.append(f"hessian.probe must be 'lr_grad' or 'displacement', got {self.probe!r}")
        if self.eps_scale <= 0:
            errors.append(f"hessian.eps_scale must be > 0, got {self.eps_scale}")
        return errors


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec
    model: ModelConfig
    schedule: ScheduleSpec = ScheduleSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    strategy: str = "random"
    stride: int | None = None
    batch_size: int = 256
    max_epochs: int = 5000
    target_accuracy: float = 0.995
    master_seed: int = 0
    eval_subset: int = 10000
    full_test_every_epoch: bool = False
    hooks: dict = field(default_factory=lambda: dict(DEFAULT_CADENCES))
    counterfactual_k: int = 3
    hessian: HessianConfig = HessianConfig()
    checkpoint_every: int = 100
    reference_params: str | None = None

    def validate(self) -> list[str]:
        errors = self.task.validate() + self.model.validate() + self.schedule.validate()
        errors += self.optimizer.validate() + self.hessian.validate()
        if self.model.p != self.task.p:
            errors.append(f"model.p ({self.model.p}) must equal task.p ({self.task.p})")
        if self.strategy not in STRATEGIES:
            errors.append(f"strategy must be one of {list(STRATEGIES)}, got {self.strategy!r}")
        if self.stride is not None and not 1 <= self.stride < self.task.p:
            errors.append(f"stride must satisfy 1 <= s < p, got {self.stride}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            errors.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        elif self.max_epochs > self.schedule.total_epochs:
            errors.append(f"max_epochs ({self.max_epochs}) exceeds schedule.total_epochs "
                          f"({self.schedule.total_epochs})")
        if not 0 < self.target_accuracy <= 1:
            errors.append(f"target_accuracy must lie in (0, 1], got {self.target_accuracy}")
        if self.master_seed < 0:
            errors.append(f"master_seed must be non-negative, got {self.master_seed}")
        if self.eval_subset < 1:
            errors.append(f"eval_subset must be >= 1, got {self.eval_subset}")
        for name, cadence in self.hooks.items():
            if name not in HOOK_NAMES:
                errors.append(f"hooks: unknown hook {name!r}; known hooks are {list(HOOK_NAMES)}")
            elif not isinstance(cadence, int) or isinstance(cadence, bool) or cadence < 1:
                errors.append(f"hooks.{name}: cadence must be an integer >= 1, got {cadence!r}")
        if self.counterfactual_k < 2:
            errors.append(f"counterfactual_k must be >= 2, got {self.counterfactual_k}")
        if self.checkpoint_every < 1:
            errors.append(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        return errors

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


_NESTED = {"task": TaskSpec, "model": ModelConfig, "schedule": ScheduleSpec, "optimizer": OptimizerConfig,
           "hessian": HessianConfig}


def _check_type(value, hint, where: str, errors: list[str]) -> bool:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return True
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    if hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is bool:
        ok = isinstance(value, bool)
    elif hint is str:
        ok = isinstance(value, str)
    elif hint is dict or origin is dict:
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        errors.append(f"{where}: expected {getattr(hint, '__name__', hint)}, got {type(value).__name__} {value!r}")
    return ok


def _parse(cls, data, where: str, errors: list[str]):
    if not isinstance(data, dict):
        errors.append(f"{where or 'config'}: expected an object, got {type(data).__name__}")
        return None
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls) if f.init]
    for key in data:
        if key not in names:
            errors.append(f"{where}{key}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        path = f"{where}{f.name}"
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                errors.append(f"{path}: required key missing")
            continue
        value = data[f.name]
        if cls is ExperimentConfig and f.name in _NESTED:
            value = _parse(_NESTED[f.name], value, path + ".", errors)
            if value is None:
                continue
        elif not _check_type(value, hints[f.name], path, errors):
            # leave the default in place so range checks still run on the rest
            continue
        elif hints[f.name] in (float, float | None) and isinstance(value, int):
            value = float(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{where or 'config'}: {exc}")
        return None


def config_from_dict(data: dict) -> ExperimentConfig:
    errors: list[str] = []
    cfg = _parse(ExperimentConfig, data, "", errors)
    if cfg is not None:
        errors += cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return config_from_dict(data)


def desk_config(strategy: str = "random", seed: int = 0, weight_decay: float = 0.1, max_epochs: int = 3000,
                hooks: dict | None = None, **overrides) -> ExperimentConfig:
    """The p=97 weight-decay ablation setting (train 2500, d=128, 1 layer, batch 32)."""
    cfg = ExperimentConfig(
        task=TaskSpec(p=97, train_size=2500, test_size=97 * 97 - 2500, data_seed=seed),
        model=ModelConfig(p=97, d_model=128, n_heads=4, d_ff=512, n_layers=1, dropout=0.1),
        schedule=ScheduleSpec(1e-3, 5e-7, 5000),
        optimizer=OptimizerConfig(weight_decay=weight_decay),
        strategy=strategy,
        batch_size=32,
        max_epochs=max_epochs,
        master_seed=seed,
        hooks=dict(hooks) if hooks is not None else {"training_metrics": 1},
    )
    return cfg.replace(**overrides) if overrides else cfg
