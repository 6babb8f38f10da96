"""Parameter layouts, metric sinks, checkpoints and configs."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordering_lab.checkpoint import CheckpointError, load_arrays, load_checkpoint, save_arrays, save_checkpoint
from ordering_lab.config import ConfigError, config_from_dict, desk_config, load_config
from ordering_lab.optim import AdamWState, TrainingSnapshot
from ordering_lab.params import ParameterVector, ParamLayout
from ordering_lab.sink import MetricSink, clean, read_jsonl, rows_to_csv

LAYOUT = ParamLayout.from_pairs([("w", (2, 3)), ("b", (3,)), ("e", (1,))])


# -- params --------------------------------------------------------------

def test_layout_offsets_and_views_alias():
    assert LAYOUT.offsets == (0, 6, 9) and LAYOUT.size == 10
    pv = ParameterVector(LAYOUT, np.arange(10, dtype=np.float64))
    assert pv["w"].shape == (2, 3) and pv["b"].tolist() == [6.0, 7.0, 8.0]
    pv["b"][...] = 0
    assert pv.flat[6:9].tolist() == [0.0, 0.0, 0.0]


def test_parameter_vector_shape_check():
    with pytest.raises(ValueError):
        ParameterVector(LAYOUT, np.zeros(9))


def test_parameter_copy_is_independent():
    pv = ParameterVector(LAYOUT, np.ones(10))
    cp = pv.copy()
    cp.flat[0] = 5
    assert pv.flat[0] == 1


# -- sink ----------------------------------------------------------------

def test_clean_nonfinite_and_numpy():
    out = clean({"a": np.float32(1.5), "b": float("nan"), "c": np.arange(2), "d": np.bool_(True), "e": -np.inf})
    assert out == {"a": 1.5, "b": None, "c": [0, 1], "d": True, "e": None}


def test_csv_column_order_and_empty_cells():
    text = rows_to_csv([{"epoch": 1, "x": 0.5}, {"epoch": 2, "y": None, "x": 1.0}])
    assert text.splitlines() == ["epoch,x,y", "1,0.5,", "2,1.0,"]


def test_sink_roundtrip_and_truncate(tmp_path):
    sink = MetricSink(tmp_path)
    for e in range(1, 5):
        sink.emit("norms", e, {"total_norm": float(e), "bad": float("inf")})
    sink.flush()
    rows = read_jsonl(tmp_path / "norms.jsonl")
    assert [r["epoch"] for r in rows] == [1, 2, 3, 4]
    assert rows[0]["bad"] is None
    assert (tmp_path / "norms.csv").read_text().startswith("epoch,total_norm,bad\n")
    sink.truncate_after(2)
    assert [r["epoch"] for r in read_jsonl(tmp_path / "norms.jsonl")] == [1, 2]
    assert len((tmp_path / "norms.csv").read_text().splitlines()) == 3
    assert sink.hooks() == ["norms"]


def test_memory_sink_keeps_rows():
    sink = MetricSink(None)
    sink.emit("a", 1, {"x": 1})
    sink.flush()
    assert sink.memory["a"] == [{"epoch": 1, "x": 1}]


# -- checkpoints -----------------------------------------------------------

def snapshot(seed=0):
    rng = np.random.default_rng(seed)
    pv = ParameterVector(LAYOUT, rng.normal(size=10).astype(np.float32))
    adam = AdamWState(rng.normal(size=10).astype(np.float32), rng.random(10).astype(np.float32), 7,
                      weight_decay=0.05)
    hooks = {"consecutive": {"prev": rng.normal(size=10)}, "fourier": {"ever": [3, 11]},
             "batch_dynamics": {"capacity": 50, "steps": np.arange(3), "grads": rng.normal(size=(3, 10))}}
    return TrainingSnapshot(pv, adam, epoch=12, step=948, hook_states=hooks)


def test_checkpoint_roundtrip_exact(tmp_path):
    snap = snapshot()
    save_checkpoint(tmp_path / "ck", snap, {"note": "x"})
    back, meta = load_checkpoint(tmp_path / "ck", LAYOUT)
    assert back.params.flat.tobytes() == snap.params.flat.tobytes()
    assert back.adam.m.tobytes() == snap.adam.m.tobytes() and back.adam.t == 7
    assert back.adam.weight_decay == 0.05
    assert (back.epoch, back.step) == (12, 948)
    np.testing.assert_array_equal(back.hook_states["consecutive"]["prev"], snap.hook_states["consecutive"]["prev"])
    assert back.hook_states["fourier"] == {"ever": [3, 11]}
    assert meta["note"] == "x" and meta["rng_cursors"] == {"dropout": [12, 948], "shuffle": [12]}
    assert not (tmp_path / "ck.tmp").exists()


def test_corrupted_checkpoint_fails_checksum(tmp_path):
    save_checkpoint(tmp_path / "ck", snapshot())
    f = tmp_path / "ck" / "000.bin"
    raw = bytearray(f.read_bytes())
    raw[0] ^= 0xFF
    f.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_layout_mismatch(tmp_path):
    save_checkpoint(tmp_path / "ck", snapshot())
    other = ParamLayout.from_pairs([("w", (10,))])
    with pytest.raises(CheckpointError, match="layout"):
        load_checkpoint(tmp_path / "ck", other)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "nothing")


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["<f4", "<f8", "<i8", ">f8"]), st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_arrays_roundtrip_any_dtype(tmp_path_factory, dtype, shape):
    d = tmp_path_factory.mktemp("arr")
    arr = np.arange(int(np.prod(shape))).reshape(shape).astype(dtype)
    save_arrays(d / "a", {"x": arr}, {})
    back, _ = load_arrays(d / "a")
    np.testing.assert_array_equal(back["x"], arr)


# -- config ----------------------------------------------------------------

def test_desk_config_roundtrip(tmp_path):
    cfg = desk_config("stride", 3, 0.05)
    assert not cfg.validate()
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg


def test_config_collects_all_errors():
    data = json.loads(desk_config().to_json())
    data["strategy"] = "sorted"
    data["batch_size"] = "32"
    data["bogus"] = 1
    data["model"]["p"] = 101
    data["hooks"] = {"nope": 1, "norms": 0}
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    text = "\n".join(err.value.errors)
    for needle in ("strategy", "batch_size", "bogus: unknown key", "model.p", "unknown hook 'nope'", "hooks.norms"):
        assert needle in text


def test_config_int_for_float_accepted():
    data = json.loads(desk_config().to_json())
    data["optimizer"]["weight_decay"] = 0
    assert config_from_dict(data).optimizer.weight_decay == 0.0


def test_config_rejects_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_max_epochs_bounded_by_schedule():
    cfg = desk_config(max_epochs=6000)
    assert any("max_epochs" in e for e in cfg.validate())
