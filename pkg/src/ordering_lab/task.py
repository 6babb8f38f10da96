"""Modular-addition task: labels, seeded train/test splits, dataset files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod


class CapacityError(ValueError):
    """Requested more distinct pairs than the p x p grid holds."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class TaskSpec:
    p: int
    train_size: int
    test_size: int
    data_seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        if not (self.p >= 3 and is_prime(self.p)):
            errors.append(f"task.p must be a prime >= 3, got {self.p}")
        if self.train_size <= 0:
            errors.append(f"task.train_size must be > 0, got {self.train_size}")
        if self.test_size < 0:
            errors.append(f"task.test_size must be >= 0, got {self.test_size}")
        elif self.test_size == 0 and self.p >= 3 and self.train_size != self.p * self.p:
            errors.append("task.test_size may be 0 only when the training set covers all pairs")
        if self.p >= 1 and self.train_size + self.test_size > self.p * self.p:
            errors.append(
                f"task: train_size + test_size = {self.train_size + self.test_size} exceeds p^2 = {self.p * self.p}"
            )
        if self.data_seed < 0:
            errors.append(f"task.data_seed must be non-negative, got {self.data_seed}")
        return errors


def label(a: int, b: int, p: int) -> int:
    """(a + b) mod p for operands in [0, p)."""
    if not (0 <= a < p and 0 <= b < p):
        raise ValueError(f"operands must lie in [0, {p}), got ({a}, {b})")
    return (a + b) % p


@dataclass
class Split:
    """Example pairs stored column-wise; labels are always derived."""

    a: np.ndarray
    b: np.ndarray
    p: int

    def __len__(self) -> int:
        return len(self.a)

    @property
    def labels(self) -> np.ndarray:
        return (self.a + self.b) % self.p

    @property
    def pair_index(self) -> np.ndarray:
        return self.a * self.p + self.b

    @classmethod
    def from_index(cls, idx: np.ndarray, p: int) -> Split:
        idx = np.asarray(idx, dtype=np.int64)
        return cls(a=idx // p, b=idx % p, p=p)

    def take(self, rows: np.ndarray) -> Split:
        return Split(a=self.a[rows], b=self.b[rows], p=self.p)

    def pairs(self) -> list[tuple[int, int, int]]:
        return list(zip(self.a.tolist(), self.b.tolist(), self.labels.tolist()))


@dataclass
class Dataset:
    spec: TaskSpec
    train: Split
    test: Split

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.train.pair_index.astype("<u8").tobytes())
        h.update(self.test.pair_index.astype("<u8").tobytes())
        return h.hexdigest()


def generate_dataset(spec: TaskSpec) -> Dataset:
    """Train then test pairs drawn without replacement from the p^2 grid."""
    n_total = spec.p * spec.p
    need = spec.train_size + spec.test_size
    if need > n_total:
        raise CapacityError(f"requested {need} distinct pairs but p^2 = {n_total}")
    errors = spec.validate()
    if errors:
        raise ValueError("; ".join(errors))
    idx = rngmod.sample_without_replacement(n_total, need, rngmod.stream(spec.data_seed, "data"))
    return Dataset(
        spec=spec,
        train=Split.from_index(idx[: spec.train_size], spec.p),
        test=Split.from_index(idx[spec.train_size:], spec.p),
    )


def save_dataset(ds: Dataset, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"format": "modadd-dataset/1", **asdict(ds.spec), "sha256": ds.fingerprint()}
    for name, split in (("train", ds.train), ("test", ds.test)):
        rec = np.stack([split.pair_index, split.labels]).T.astype("<u8")
        (directory / f"{name}.bin").write_bytes(rec.tobytes())
    (directory / "dataset.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_dataset(directory: Path) -> Dataset:
    """Inverse of :func:`save_dataset`; every stored label is re-checked."""
    directory = Path(directory)
    header = json.loads((directory / "dataset.json").read_text())
    spec = TaskSpec(header["p"], header["train_size"], header["test_size"], header["data_seed"])
    splits = {}
    for name, size in (("train", spec.train_size), ("test", spec.test_size)):
        rec = np.frombuffer((directory / f"{name}.bin").read_bytes(), dtype="<u8").reshape(-1, 2)
        if len(rec) != size:
            raise ValueError(f"{directory / name}.bin holds {len(rec)} pairs, header says {size}")
        split = Split.from_index(rec[:, 0].astype(np.int64), spec.p)
        bad = np.flatnonzero(split.labels != rec[:, 1].astype(np.int64))
        if bad.size:
            raise ValueError(f"{name} split: stored label mismatch at row {int(bad[0])}")
        splits[name] = split
    ds = Dataset(spec=spec, train=splits["train"], test=splits["test"])
    if ds.fingerprint() != header["sha256"]:
        raise ValueError(f"dataset checksum mismatch in {directory}")
    return ds
