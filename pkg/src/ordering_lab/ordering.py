"""Per-epoch example orderings for the four strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import rng as rngmod
from .task import Split

STRATEGIES = ("stride", "fixed_random", "random", "target")


@dataclass(frozen=True)
class PermutationPlan:
    order: np.ndarray
    batch_size: int
    epoch: int
    strategy: str

    @property
    def n_batches(self) -> int:
        return -(-len(self.order) // self.batch_size)

    def batch(self, i: int) -> np.ndarray:
        return self.order[i * self.batch_size:(i + 1) * self.batch_size]

    def batches(self) -> Iterator[np.ndarray]:
        for i in range(self.n_batches):
            yield self.batch(i)

    def with_epoch(self, epoch: int) -> PermutationPlan:
        return PermutationPlan(self.order, self.batch_size, epoch, self.strategy)


def default_stride(p: int) -> int:
    return math.isqrt(p)


def stride_order(train: Split, s: int) -> np.ndarray:
    """Indices stably sorted by ``(a mod s, a)``."""
    if not 1 <= s < train.p:
        raise ValueError(f"stride must satisfy 1 <= s < p={train.p}, got {s}")
    # lexsort sorts by the last key first and is stable
    return np.lexsort((train.a, train.a % s)).astype(np.int64)


def target_order(train: Split) -> np.ndarray:
    return np.argsort(train.labels, kind="stable").astype(np.int64)


def fixed_random_order(n: int, seed: int) -> np.ndarray:
    return rngmod.permutation(n, rngmod.stream(seed, "fixed_order"))


def fresh_shuffle_order(n: int, master_seed: int, epoch: int) -> np.ndarray:
    return rngmod.permutation(n, rngmod.stream(master_seed, "shuffle", epoch))


def stride_permutation(train: Split, s: int, batch_size: int = 256, epoch: int = 0) -> PermutationPlan:
    return PermutationPlan(stride_order(train, s), batch_size, epoch, "stride")


def target_permutation(train: Split, batch_size: int = 256, epoch: int = 0) -> PermutationPlan:
    return PermutationPlan(target_order(train), batch_size, epoch, "target")


def fixed_random_permutation(n: int, seed: int, batch_size: int = 256, epoch: int = 0) -> PermutationPlan:
    return PermutationPlan(fixed_random_order(n, seed), batch_size, epoch, "fixed_random")


def fresh_shuffle(n: int, master_seed: int, epoch: int, batch_size: int = 256) -> PermutationPlan:
    return PermutationPlan(fresh_shuffle_order(n, master_seed, epoch), batch_size, epoch, "random")


def predicted_fundamental(p: int, s: int) -> int:
    """Round-half-up of p/s, in exact integer arithmetic."""
    if not 1 <= s < p:
        raise ValueError(f"stride must satisfy 1 <= s < p, got s={s}, p={p}")
    return (2 * p + s) // (2 * s)


class Orderer:
    """Produces the plan for each epoch; epoch-invariant orders are cached."""

    def __init__(self, strategy: str, train: Split, batch_size: int, master_seed: int, stride: int | None = None):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        self.strategy = strategy
        self.train = train
        self.batch_size = batch_size
        self.master_seed = master_seed
        self.stride = stride if stride is not None else default_stride(train.p)
        self._fixed: np.ndarray | None = None

    def plan(self, epoch: int) -> PermutationPlan:
        if self.strategy == "random":
            return fresh_shuffle(len(self.train), self.master_seed, epoch, self.batch_size)
        if self._fixed is None:
            if self.strategy == "stride":
                self._fixed = stride_order(self.train, self.stride)
            elif self.strategy == "target":
                self._fixed = target_order(self.train)
            else:
                self._fixed = fixed_random_order(len(self.train), self.master_seed)
        return PermutationPlan(self._fixed, self.batch_size, epoch, self.strategy)
