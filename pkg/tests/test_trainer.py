import json
import shutil

import numpy as np
import pytest
from conftest import tiny_config

from ordering_lab.checkpoint import CheckpointError, load_checkpoint
from ordering_lab.config import HOOK_NAMES, ConfigError
from ordering_lab.model import NumericFailure
from ordering_lab.optim import ScheduleSpec
from ordering_lab.ordering import PermutationPlan
from ordering_lab.rng import stream
from ordering_lab.sink import read_jsonl
from ordering_lab.trainer import RunIOError, Trainer, list_checkpoints, resume_experiment, run_experiment

ALL_HOOKS = {name: 1 for name in HOOK_NAMES if name != "gradient_projection"} | {"counterfactual": 2}


def metric_bytes(run_dir):
    return {p.name: p.read_bytes() for p in sorted((run_dir / "metrics").iterdir())}


def final_params(run_dir):
    return (run_dir / "final-model" / "000.bin").read_bytes()


def test_run_directory_layout(tmp_path):
    res = run_experiment(tiny_config(hooks=ALL_HOOKS), tmp_path / "r")
    d = res.run_dir
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["status"] == "max_epochs" and manifest["epochs_run"] == 6
    assert manifest["decisions"]["init_scheme"] == "fan_in_uniform/v1"
    assert (d / "dataset" / "dataset.json").exists()
    assert list_checkpoints(d) == [0, 2, 4, 6]
    assert (d / "final-model" / "manifest.json").exists()
    for hook in ALL_HOOKS:
        assert (d / "metrics" / f"{hook}.jsonl").exists(), hook
        assert (d / "metrics" / f"{hook}.csv").exists(), hook
    assert (d / "metrics" / "hessian_steps.jsonl").exists()


def test_rerun_is_byte_identical(tmp_path):
    cfg = tiny_config(hooks=ALL_HOOKS)
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert metric_bytes(a.run_dir) == metric_bytes(b.run_dir)
    assert final_params(a.run_dir) == final_params(b.run_dir)


@pytest.mark.parametrize("strategy", ["stride", "target", "fixed_random", "random"])
def test_hooks_do_not_change_training(tmp_path, strategy):
    on = run_experiment(tiny_config(strategy, hooks=ALL_HOOKS), tmp_path / "on")
    off = run_experiment(tiny_config(strategy), tmp_path / "off")
    assert final_params(on.run_dir) == final_params(off.run_dir)
    assert (on.run_dir / "metrics" / "training_metrics.jsonl").read_bytes() == \
        (off.run_dir / "metrics" / "training_metrics.jsonl").read_bytes()


@pytest.mark.parametrize("strategy,checkpoint", [("random", 2), ("stride", 4), ("random", 0)])
def test_resume_is_byte_identical(tmp_path, strategy, checkpoint):
    cfg = tiny_config(strategy, hooks=ALL_HOOKS)
    straight = run_experiment(cfg, tmp_path / "straight")
    shutil.copytree(straight.run_dir, tmp_path / "resumed")
    res = resume_experiment(tmp_path / "resumed", checkpoint)
    assert res.epochs_run == 6
    assert metric_bytes(res.run_dir) == metric_bytes(straight.run_dir)
    assert final_params(res.run_dir) == final_params(straight.run_dir)
    assert list_checkpoints(res.run_dir) == [0, 2, 4, 6]


def test_resume_detects_edited_manifest(tmp_path):
    partial = run_experiment(tiny_config(max_epochs=3), tmp_path / "partial")
    manifest = json.loads((partial.run_dir / "manifest.json").read_text())
    manifest["config"]["max_epochs"] = 6
    (partial.run_dir / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="different config"):
        resume_experiment(partial.run_dir, 2)


def test_resume_rejects_config_drift(tmp_path):
    cfg = tiny_config()
    run_experiment(cfg, tmp_path / "r")
    with pytest.raises(CheckpointError):
        resume_experiment(tmp_path / "r", config=cfg.replace(master_seed=5))
    with pytest.raises(CheckpointError, match="no checkpoint for epoch 3"):
        resume_experiment(tmp_path / "r", 3)


def test_existing_run_dir_refused(tmp_path):
    run_experiment(tiny_config(max_epochs=1), tmp_path / "r")
    with pytest.raises(RunIOError):
        run_experiment(tiny_config(max_epochs=1), tmp_path / "r")


def test_checkpoint_zero_is_the_initial_state(tmp_path):
    cfg = tiny_config()
    run_experiment(cfg, tmp_path / "r")
    snap, _ = load_checkpoint(tmp_path / "r" / "checkpoints" / "0")
    fresh = Trainer(cfg)
    assert snap.params.flat.tobytes() == fresh.params.flat.tobytes()
    assert snap.adam.t == 0 and not snap.adam.m.any()


def test_snapshot_restore_replays_exactly():
    tr = Trainer(tiny_config())
    tr.attach_hooks()
    tr.run_epoch()
    snap = tr.snapshot()
    first = [tr.run_epoch()["loss"] for _ in range(3)]
    after_first = tr.params.flat.copy()
    tr.restore(snap)
    second = [tr.run_epoch()["loss"] for _ in range(3)]
    assert first == second
    assert tr.params.flat.tobytes() == after_first.tobytes()


def test_isolation_nested_and_on_error():
    tr = Trainer(tiny_config())
    before = tr.params.flat.copy()
    with tr.isolated():
        tr.run_epoch()
        mid = tr.params.flat.copy()
        with tr.isolated():
            tr.run_epoch()
        assert tr.params.flat.tobytes() == mid.tobytes()
    assert tr.params.flat.tobytes() == before.tobytes() and tr.epoch == 0
    with pytest.raises(RuntimeError):
        with tr.isolated():
            tr.run_epoch()
            raise RuntimeError("boom")
    assert tr.params.flat.tobytes() == before.tobytes() and tr.step == 0
    tr.with_isolated_state(lambda: None)
    assert tr.params.flat.tobytes() == before.tobytes()


def test_isolated_shuffled_epochs_leave_trajectory():
    a, b = Trainer(tiny_config()), Trainer(tiny_config())
    a.attach_hooks(), b.attach_hooks()
    for _ in range(2):
        a.run_epoch()
        a.with_isolated_state(lambda: [a.shuffled_epoch_gradient(a.snapshot(), a.epoch + 1, k, "x")
                                       for k in range(3)])
        b.run_epoch()
    assert a.params.flat.tobytes() == b.params.flat.tobytes()


def test_single_batch_epoch_gradient_is_the_batch_gradient():
    cfg = tiny_config(batch_size=100)
    tr = Trainer(cfg)
    a, b, y = tr._train
    _, g = tr.model.loss_and_grad(tr.params, a, b, y, stream(cfg.master_seed, "dropout", 1, 0))
    expected = g.flat.astype(np.float64)
    plan = PermutationPlan(np.arange(60), 100, 1, "random")
    res = tr.train_epoch(tr.params.copy(), tr.adam.copy(), plan, 1e-3, "dropout", (1,))
    assert res.n_batches == 1
    np.testing.assert_array_equal(res.mean_grad, expected)


def test_zero_lr_epoch_is_mean_gradient_at_fixed_point():
    cfg = tiny_config()
    tr = Trainer(cfg)
    a, b, y = tr._train
    plan = tr.orderer.plan(1)
    params = tr.params.copy()
    res = tr.train_epoch(params, tr.adam.copy(), plan, 0.0, "dropout", (1,))
    assert params.flat.tobytes() == tr.params.flat.tobytes()
    grads = [tr.model.loss_and_grad(tr.params, a[idx], b[idx], y[idx], stream(cfg.master_seed, "dropout", 1, i))[1]
             .flat.astype(np.float64) for i, idx in enumerate(plan.batches())]
    np.testing.assert_allclose(res.mean_grad, np.mean(grads, axis=0), rtol=1e-12, atol=1e-15)


def test_energy_identity_at_every_counterfactual_emission():
    res = run_experiment(tiny_config(hooks={"counterfactual": 1}))
    rows = res.trainer.sink.memory["counterfactual"]
    assert len(rows) == 6
    for r in rows:
        assert r["energy_identity_residual"] < 1e-10
        assert 0 < r["ordering_fraction"] < 1


def test_hessian_burst_truncated_on_short_epochs():
    res = run_experiment(tiny_config(batch_size=25, hooks={"hessian": 1}, max_epochs=2))
    rows = res.trainer.sink.memory["hessian"]
    # 60 examples in batches of 25 -> 3 batches -> 2 probe steps
    assert [r["burst_steps"] for r in rows] == [2, 2]
    steps = res.trainer.sink.memory["hessian_steps"]
    assert [s["burst_step"] for s in steps] == [0, 1, 0, 1]
    assert steps[0]["entanglement_coherence"] is None and steps[1]["entanglement_coherence"] is not None


def test_gradient_projection_with_reference(tmp_path):
    ref = run_experiment(tiny_config(max_epochs=3), tmp_path / "ref")
    cfg = tiny_config(hooks={"gradient_projection": 1, "adam_dynamics": 1, "counterfactual": 3},
                      reference_params=str(ref.run_dir / "final-model"))
    res = run_experiment(cfg)
    row = res.trainer.sink.memory["gradient_projection"][0]
    assert -1 <= row["overall_grad_cossim_to_solution"] <= 1
    assert "update_solution_cossim" in res.trainer.sink.memory["adam_dynamics"][0]
    assert "content_grad_cossim_to_solution" in res.trainer.sink.memory["counterfactual"][0]


def test_cadence_controls_emission_epochs():
    res = run_experiment(tiny_config(hooks={"norms": 2, "fourier": 5}))
    assert [r["epoch"] for r in res.trainer.sink.memory["norms"]] == [1, 3, 5]
    assert [r["epoch"] for r in res.trainer.sink.memory["fourier"]] == [1, 6]


def test_stop_rule_uses_full_test():
    res = run_experiment(tiny_config(target_accuracy=0.01))
    assert res.status == "target_reached" and res.stop_epoch == 1
    row = res.trainer.sink.memory["training_metrics"][0]
    assert row["val_acc_full"] is not None


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_numeric_failure_recorded(tmp_path):
    cfg = tiny_config(schedule=ScheduleSpec(1e38, 1e38, 50))
    with pytest.raises(NumericFailure):
        run_experiment(cfg, tmp_path / "r")
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["status"] == "numeric_failure"


def test_invalid_strategy_rejected():
    with pytest.raises(ConfigError, match="strategy"):
        Trainer(tiny_config(strategy="sorted"))


def test_eval_subset_is_seeded_and_bounded():
    cfg = tiny_config(eval_subset=10)
    a, b = Trainer(cfg), Trainer(cfg)
    assert a.eval_rows.tolist() == b.eval_rows.tolist()
    assert len(a.eval_rows) == 10 and len(np.unique(a.eval_rows)) == 10
    assert len(Trainer(tiny_config()).eval_rows) == 40


def test_k_validation_report_on_tiny_run():
    tr = Trainer(tiny_config())
    tr.attach_hooks()
    tr.run_epoch()
    before = tr.params.flat.copy()
    rep = tr.k_validation(3)
    assert rep.k == 3 and len(rep.subset_norms) == 4
    assert tr.params.flat.tobytes() == before.tobytes() and tr.epoch == 1
