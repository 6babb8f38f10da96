"""Checkpoint directories: a JSON manifest plus one raw little-endian file per array."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from pathlib import Path

import numpy as np

from .optim import AdamWState, TrainingSnapshot
from .params import ParameterVector, ParamLayout

FORMAT = "ordlab-checkpoint/1"


class CheckpointError(IOError):
    pass


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def _split_arrays(obj, prefix: str, arrays: dict):
    """Replace every ndarray in a nested structure by a reference into ``arrays``."""
    if isinstance(obj, np.ndarray):
        arrays[prefix] = obj
        return {"__array__": prefix}
    if isinstance(obj, dict):
        return {k: _split_arrays(v, f"{prefix}.{k}", arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_split_arrays(v, f"{prefix}.{i}", arrays) for i, v in enumerate(obj)]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _join_arrays(obj, arrays: dict):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return arrays[obj["__array__"]]
        return {k: _join_arrays(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_join_arrays(v, arrays) for v in obj]
    return obj


def save_arrays(directory: Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write arrays and metadata; the directory appears atomically."""
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    entries = {}
    for i, (name, arr) in enumerate(arrays.items()):
        data = _le(np.asarray(arr))
        raw = data.tobytes()
        fname = f"{i:03d}.bin"
        (tmp / fname).write_bytes(raw)
        entries[name] = {"file": fname, "dtype": data.dtype.str, "shape": list(data.shape),
                         "sha256": hashlib.sha256(raw).hexdigest()}
    manifest = {"format": FORMAT, "arrays": entries, "meta": meta}
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)


def load_arrays(directory: Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise CheckpointError(f"{mpath}: missing checkpoint manifest")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{mpath}: unsupported format {manifest.get('format')!r}")
    arrays = {}
    for name, e in manifest["arrays"].items():
        path = directory / e["file"]
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        if hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise CheckpointError(f"{path}: checksum mismatch for array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, manifest["meta"]


def save_checkpoint(directory: Path, snap: TrainingSnapshot, meta: dict | None = None) -> None:
    arrays = {"params": snap.params.flat, "adam.m": snap.adam.m, "adam.v": snap.adam.v}
    hooks = _split_arrays(snap.hook_states, "hooks", arrays)
    meta = dict(meta or {})
    meta.update({
        "epoch": snap.epoch,
        "step": snap.step,
        "adam": {"t": snap.adam.t, **snap.adam.hyper()},
        "rng_cursors": snap.rng_cursors,
        "layout": snap.params.layout.to_json(),
        "hook_states": hooks,
    })
    save_arrays(directory, arrays, meta)


def load_checkpoint(directory: Path, layout: ParamLayout | None = None) -> tuple[TrainingSnapshot, dict]:
    arrays, meta = load_arrays(directory)
    stored = ParamLayout.from_pairs([(n, tuple(s)) for n, s in meta["layout"]])
    if layout is not None and stored != layout:
        raise CheckpointError(f"{directory}: parameter layout does not match the model config")
    a = meta["adam"]
    adam = AdamWState(arrays["adam.m"], arrays["adam.v"], int(a["t"]), a["beta1"], a["beta2"], a["eps"],
                      a["weight_decay"])
    snap = TrainingSnapshot(
        params=ParameterVector(stored, arrays["params"]),
        adam=adam,
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        hook_states=_join_arrays(meta["hook_states"], arrays),
    )
    return snap, meta
