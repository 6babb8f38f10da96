import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ordering_lab import metrics as M
from ordering_lab.params import ParamLayout

L2 = ParamLayout.from_pairs([("a", (1,)), ("b", (1,))])


def test_grad_norms_example():
    out = M.grad_norm_metrics(np.array([3.0, 4.0]), L2)
    assert (out["total_norm"], out["max_component"], out["mean_component"]) == (5.0, 4.0, 3.5)
    assert out["norm_a"] == 3.0 and out["norm_b"] == 4.0


def test_zero_grad_norms():
    out = M.grad_norm_metrics(np.zeros(2), L2)
    assert out["total_norm"] == out["max_component"] == out["mean_component"] == 0.0


@settings(max_examples=50)
@given(arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)))
def test_layer_norms_pythagoras(g):
    layout = ParamLayout.from_pairs([("x", (2, 3)), ("y", (4,)), ("z", (2,))])
    out = M.grad_norm_metrics(g, layout)
    assert sum(out[f"norm_{n}"] ** 2 for n in "xyz") == pytest.approx(out["total_norm"] ** 2, rel=1e-9, abs=1e-9)


def test_consecutive_cosine_examples():
    out = M.consecutive_cossim([1.0, 2.0], [1.0, 2.0])
    assert out["cos_sim"] == pytest.approx(1.0) and out["angle_degrees"] == pytest.approx(0.0, abs=1e-5)
    out = M.consecutive_cossim([1.0, 0.0], [0.0, 1.0])
    assert out["cos_sim"] == 0.0 and out["angle_degrees"] == pytest.approx(90.0)
    assert M.consecutive_cossim([0.0, 0.0], [1.0, 0.0])["cos_sim"] is None


def test_weight_tracking_examples():
    layout = ParamLayout.from_pairs([("w", (3, 3))])
    eye = np.eye(3).ravel()
    out = M.weight_tracking(eye, eye, layout)
    assert out["top_sv/w"] == pytest.approx(1.0)
    assert out["effective_rank/w"] == pytest.approx(3.0)
    assert out["grad_weight_align/w"] == pytest.approx(1.0)
    rank1 = np.outer([1.0, 2.0, 3.0], [0.5, -1.0, 2.0]).ravel()
    assert M.weight_tracking(rank1, eye, layout)["effective_rank/w"] == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-10, 10)))
def test_singular_values_match_svd(w):
    np.testing.assert_allclose(M.singular_values(w), np.linalg.svd(w, compute_uv=False), atol=1e-6)


def test_parameter_delta_examples():
    assert M.parameter_delta([1.0, 0.0], [1.0, 0.0])["absolute_delta"] == 0.0
    out = M.parameter_delta([1.0, 1.0], [1.0, 0.0])
    assert out["absolute_delta"] == 1.0 and out["relative_delta"] == 1.0
    theta = np.array([0.3, -2.0, 1.5])
    assert M.parameter_delta(2 * theta, theta)["relative_delta"] == pytest.approx(1.0)


def test_path_examples():
    line = [np.array([float(i), 0.0]) for i in range(5)]
    assert M.path_metrics(line)["path_efficiency"] == pytest.approx(1.0)
    back = [np.zeros(2), np.array([1.0, 0.0]), np.zeros(2)]
    out = M.path_metrics(back)
    assert out["net_displacement"] == 0.0 and out["path_efficiency"] == 0.0


@settings(max_examples=30)
@given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)))
def test_path_tracker_matches_batch(traj):
    tr = M.PathTracker(traj[0])
    for t in traj[1:]:
        row = tr.update(t)
    ref = M.path_metrics(traj)
    assert row["path_length"] == pytest.approx(ref["path_length"], abs=1e-9)
    assert row["net_displacement"] == pytest.approx(ref["net_displacement"], abs=1e-9)
    restored = M.PathTracker.from_state(tr.state_dict())
    assert restored.length == tr.length


def test_batch_dynamics_identical_gradients():
    g = np.tile([1.0, 2.0, -1.0], (50, 1))
    out = M.batch_dynamics(g)
    for lag in (1, 2, 5, 10, 20):
        assert out[f"lag_{lag}"] == pytest.approx(1.0)
    for w in (2, 5, 10, 20, 50):
        assert out[f"efficiency_{w}"] == pytest.approx(1.0)
    assert out["top1_variance"] == pytest.approx(1.0)


def test_batch_dynamics_alternating():
    g = np.array([[1.0, 1.0], [-1.0, -1.0]] * 5)
    out = M.batch_dynamics(g)
    assert out["lag_1"] == pytest.approx(-1.0)
    assert out["lag_2"] == pytest.approx(1.0)
    assert out["efficiency_2"] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("w", [2, 5, 10])
def test_batch_dynamics_orthonormal_window(w):
    out = M.batch_dynamics(np.eye(w))
    assert out[f"efficiency_{w}"] == pytest.approx(1 / math.sqrt(w))
    assert out["effective_rank"] == pytest.approx(float(w))


def test_gradient_window_ring_and_state():
    win = M.GradientWindow(2, capacity=3)
    for s in range(5):
        win.push(s, [s, -s])
    steps, grads = win.ordered()
    assert steps.tolist() == [2, 3, 4]
    assert grads[:, 0].tolist() == [2.0, 3.0, 4.0]
    back = M.GradientWindow.from_state(win.state_dict(), 2)
    assert back.ordered()[0].tolist() == [2, 3, 4]


def test_projection_to_solution():
    layout = ParamLayout.from_pairs([("w", (2,))])
    theta, ref = np.zeros(2), np.array([1.0, 1.0])
    out = M.projection_to_solution(np.array([-2.0, -2.0]), theta, ref, layout)
    assert out["overall_grad_cossim_to_solution"] == pytest.approx(1.0)
    out = M.projection_to_solution(np.array([2.0, 2.0]), theta, ref, layout)
    assert out["overall_grad_cossim_to_solution"] == pytest.approx(-1.0)


def test_adam_introspect_examples():
    g = np.array([1.0, 2.0])
    out = M.adam_introspect(g, np.ones(2), g, -0.5 * g, 1e-3, 1e-8)
    assert out["update_deflection"] == pytest.approx(0.0, abs=1e-12)
    assert out["effective_lr_cv"] == 0.0


def test_adam_amplification_first_step():
    # m_hat = g, v_hat = g^2, so the update is -lr * sign(g)
    g = np.array([0.01, 0.01])
    update = -1e-3 * g / (np.abs(g) + 1e-12)
    out = M.adam_introspect(0.1 * g, g ** 2, g, update, 1e-3, 1e-12)
    assert out["amplification_ratio"] == pytest.approx(100.0)


def test_adam_tier2_signs():
    g = np.array([1.0, 0.0])
    out = M.adam_introspect(g, np.ones(2), g, -g, 1e-3, 1e-8, theta=np.zeros(2), theta_ref=np.array([-1.0, 0.0]))
    assert out["grad_solution_cossim"] == pytest.approx(1.0)
    assert out["update_solution_cossim"] == pytest.approx(1.0)
    assert out["momentum_solution_cossim"] == pytest.approx(1.0)
    assert out["optimizer_solution_amplification"] == pytest.approx(0.0)
