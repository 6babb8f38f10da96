import os

import numpy as np
import pytest

from ordering_lab.config import ExperimentConfig
from ordering_lab.model import ModelConfig
from ordering_lab.optim import ScheduleSpec
from ordering_lab.task import TaskSpec

RUN_SLOW = os.environ.get("ORDLAB_RUN_SLOW") == "1"


def tiny_config(strategy: str = "random", seed: int = 0, hooks: dict | None = None, **overrides) -> ExperimentConfig:
    """p=11 model small enough for a full epoch in a few milliseconds."""
    cfg = ExperimentConfig(
        task=TaskSpec(p=11, train_size=60, test_size=40, data_seed=seed),
        model=ModelConfig(p=11, d_model=16, n_heads=2, d_ff=32, dropout=0.1),
        schedule=ScheduleSpec(1e-2, 1e-5, 50),
        strategy=strategy,
        batch_size=8,
        max_epochs=6,
        master_seed=seed,
        hooks=hooks if hooks is not None else {"training_metrics": 1},
        checkpoint_every=2,
    )
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture
def tiny():
    return tiny_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
