import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ordering_lab.counterfactual import DegenerateInput, decompose, validate_k
from ordering_lab.params import ParamLayout

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_parallel_gradient_is_pure_content():
    d = decompose([2.0, 4.0], [[1.0, 2.0], [1.0, 2.0]])
    assert d.ordering_fraction == pytest.approx(0.0, abs=1e-15)
    assert d.ordering_alignment == pytest.approx(1.0)


def test_orthogonal_gradient_is_pure_ordering():
    d = decompose([0.0, 5.0], [[1.0, 0.0], [3.0, 0.0]])
    assert d.ordering_fraction == pytest.approx(1.0)
    assert d.ordering_alignment == pytest.approx(0.0)


def test_two_dimensional_example():
    d = decompose([3.0, 4.0], [[1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(d.g_content, [3.0, 0.0])
    np.testing.assert_allclose(d.g_ordering, [0.0, 4.0])
    assert d.ordering_fraction == pytest.approx(0.64)
    assert d.ordering_alignment == pytest.approx(0.6)


def test_needs_two_shuffles_and_nonzero_vectors():
    with pytest.raises(DegenerateInput):
        decompose([1.0], [[1.0]])
    with pytest.raises(DegenerateInput):
        decompose([0.0, 0.0], [[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateInput):
        decompose([1.0, 0.0], [[1.0, 0.0], [-1.0, 0.0]])


@settings(max_examples=100)
@given(arrays(np.float64, 8, elements=finite), arrays(np.float64, (3, 8), elements=finite))
def test_energy_identity_and_orthogonality(g, cf):
    if np.linalg.norm(g) < 1e-6 or np.linalg.norm(cf.mean(0)) < 1e-6:
        return
    d = decompose(g, cf)
    assert d.energy_residual() < 1e-10
    scale = np.linalg.norm(g) ** 2
    assert abs(np.dot(d.g_content, d.g_ordering)) <= 1e-10 * scale
    assert 0.0 <= d.ordering_fraction <= 1.0 + 1e-12
    assert d.ordering_fraction == pytest.approx(1 - d.ordering_alignment ** 2, abs=1e-9)


def test_per_layer_metrics_and_solution_cosines():
    layout = ParamLayout.from_pairs([("a", (2,)), ("b", (1,))])
    d = decompose([3.0, 4.0, 1.0], [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], layout)
    m = d.metrics(theta_prev=np.zeros(3), theta_ref=np.array([-1.0, 0.0, 0.0]))
    assert m["ordering_fraction/a"] == pytest.approx(0.64)
    assert m["ordering_fraction/b"] == pytest.approx(1.0)
    assert m["content_grad_cossim_to_solution"] == pytest.approx(1.0)
    assert m["content_grad_cossim_to_solution/b"] is None


def test_k_validation_high_dimensional_noise_passes():
    # signal and per-run noise of equal energy in 5000 dims: the noise terms are
    # nearly orthogonal, so ||mean_3||^2 ~ 4/3 |c|^2 and ||mean_4||^2 ~ 5/4 |c|^2
    rng = np.random.default_rng(0)
    base = rng.normal(size=5000)
    rep = validate_k([base + rng.normal(size=5000) for _ in range(4)])
    assert rep.k == 3
    assert rep.strictly_monotone
    assert rep.norm_gap == pytest.approx(np.sqrt((4 / 3) / (5 / 4)) - 1, abs=0.01)
    assert rep.passes()


def test_k_validation_tiny_noise_is_not_monotone_in_general():
    # with almost no noise the leave-one-out norms straddle the full norm
    rng = np.random.default_rng(0)
    base = rng.normal(size=50)
    rep = validate_k([base + 0.01 * rng.normal(size=50) for _ in range(4)])
    assert rep.norm_gap < 1e-4 and rep.min_cosine > 0.9999
    assert not rep.strictly_monotone


def test_k_validation_pure_noise_fails():
    rng = np.random.default_rng(1)
    rep = validate_k([rng.normal(size=500) for _ in range(4)])
    assert not rep.passes()
    assert rep.norm_gap > 0.05


def test_k_validation_needs_four_means():
    with pytest.raises(DegenerateInput):
        validate_k([np.ones(2)] * 3)
