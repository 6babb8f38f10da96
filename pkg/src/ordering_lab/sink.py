"""Per-hook metric streams: JSONL is the record of truth, CSV a regenerated mirror."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np


def clean(value):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [clean(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def encode_row(row: dict) -> str:
    return json.dumps(clean(row), allow_nan=False, separators=(",", ":"))


def read_jsonl(path: Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (dict, list)):
        return json.dumps(value, separators=(",", ":"))
    if isinstance(value, bool):
        return "true" if value else "false"
    return json.dumps(value) if isinstance(value, float) else str(value)


def rows_to_csv(rows: list[dict]) -> str:
    columns: dict[str, None] = {}
    for row in rows:
        for key in row:
            columns.setdefault(key, None)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(columns))
    for row in rows:
        writer.writerow([_cell(row.get(k)) for k in columns])
    return buf.getvalue()


class MetricSink:
    """Append-only per-hook streams under ``<run>/metrics``.

    Rows are ``{"epoch": e, **metrics}``. ``flush`` makes the JSONL durable and
    rewrites the CSV mirror of every hook touched since the last flush.
    """

    def __init__(self, directory: Path | None):
        self.directory = None if directory is None else Path(directory)
        self._pending: dict[str, list[str]] = {}
        self.memory: dict[str, list[dict]] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def emit(self, hook: str, epoch: int, row: dict) -> dict:
        record = clean({"epoch": epoch, **row})
        self.memory.setdefault(hook, []).append(record)
        if self.directory is not None:
            self._pending.setdefault(hook, []).append(json.dumps(record, allow_nan=False, separators=(",", ":")))
        return record

    def path(self, hook: str, ext: str = "jsonl") -> Path:
        return self.directory / f"{hook}.{ext}"

    def flush(self) -> None:
        if self.directory is None:
            self._pending.clear()
            return
        for hook, lines in self._pending.items():
            with open(self.path(hook), "a", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in lines))
            self.path(hook, "csv").write_text(rows_to_csv(read_jsonl(self.path(hook))))
        self._pending.clear()

    def truncate_after(self, epoch: int) -> None:
        """Drop every row with epoch > ``epoch`` (used when resuming)."""
        self._pending.clear()
        for hook in list(self.memory):
            self.memory[hook] = [r for r in self.memory[hook] if r["epoch"] <= epoch]
        if self.directory is None:
            return
        for path in sorted(self.directory.glob("*.jsonl")):
            rows = [r for r in read_jsonl(path) if r["epoch"] <= epoch]
            path.write_text("".join(encode_row(r) + "\n" for r in rows))
            path.with_suffix(".csv").write_text(rows_to_csv(rows))

    def hooks(self) -> list[str]:
        if self.directory is None:
            return sorted(self.memory)
        return sorted(p.stem for p in self.directory.glob("*.jsonl"))
