"""Flat parameter vectors with named segment views."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class ParamLayout:
    """Canonical segment order, shapes and offsets into a flat buffer.

    This registry is the only place layer names are defined; every per-layer
    metric iterates it.
    """

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    offsets: tuple[int, ...] = field(init=False)
    size: int = field(init=False)

    def __post_init__(self):
        offs, pos = [], 0
        for shape in self.shapes:
            offs.append(pos)
            pos += int(np.prod(shape))
        object.__setattr__(self, "offsets", tuple(offs))
        object.__setattr__(self, "size", pos)

    @classmethod
    def from_pairs(cls, pairs: list[tuple[str, tuple[int, ...]]]) -> ParamLayout:
        return cls(tuple(n for n, _ in pairs), tuple(tuple(s) for _, s in pairs))

    def index(self, name: str) -> int:
        return self.names.index(name)

    def slice(self, name: str) -> slice:
        i = self.index(name)
        return slice(self.offsets[i], self.offsets[i] + int(np.prod(self.shapes[i])))

    def slices(self) -> Iterator[tuple[str, slice]]:
        for name, off, shape in zip(self.names, self.offsets, self.shapes):
            yield name, slice(off, off + int(np.prod(shape)))

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        i = self.index(name)
        return flat[self.slice(name)].reshape(self.shapes[i])

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {n: flat[s].reshape(shape) for (n, s), shape in zip(self.slices(), self.shapes)}

    def to_json(self) -> list:
        return [[n, list(s)] for n, s in zip(self.names, self.shapes)]


class ParameterVector:
    """A flat array plus its layout. Segment views alias the flat buffer."""

    __slots__ = ("layout", "flat")

    def __init__(self, layout: ParamLayout, flat: np.ndarray | None = None, dtype=np.float32):
        if flat is None:
            flat = np.zeros(layout.size, dtype=dtype)
        if flat.shape != (layout.size,):
            raise ValueError(f"flat buffer has shape {flat.shape}, layout needs ({layout.size},)")
        self.layout = layout
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layout.view(self.flat, name)

    def segments(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, shape, (_, s) in zip(self.layout.names, self.layout.shapes, self.layout.slices()):
            yield name, self.flat[s].reshape(shape)

    def copy(self) -> ParameterVector:
        return ParameterVector(self.layout, self.flat.copy())

    def astype(self, dtype) -> ParameterVector:
        return ParameterVector(self.layout, self.flat.astype(dtype))

    @property
    def dtype(self):
        return self.flat.dtype

    def __len__(self) -> int:
        return self.layout.size

    def __repr__(self) -> str:
        return f"ParameterVector({len(self.layout.names)} segments, {self.layout.size} values, {self.flat.dtype})"
