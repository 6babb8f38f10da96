import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordering_lab import rng
from ordering_lab.ordering import (Orderer, PermutationPlan, default_stride, fixed_random_order, fresh_shuffle_order,
                                   predicted_fundamental, stride_order, target_order)
from ordering_lab.task import Split, TaskSpec, generate_dataset


def split_of(pairs, p=11):
    a, b = zip(*pairs)
    return Split(np.array(a), np.array(b), p)


@pytest.mark.parametrize("p,s", [(9973, 99), (97, 9)])
def test_default_stride(p, s):
    assert default_stride(p) == s


def test_stride_order_hand_example():
    # keys (a mod 3, a): (1,4) (2,2) (0,9) (0,3) -> rows 3, 2, 0, 1
    assert stride_order(split_of([(4, 1), (2, 7), (9, 3), (3, 5)]), 3).tolist() == [3, 2, 0, 1]


def test_stride_rejects_bad_stride():
    with pytest.raises(ValueError):
        stride_order(split_of([(1, 1)]), 11)


def test_target_order_hand_example():
    # labels 2, 0, 1
    assert target_order(split_of([(1, 1), (5, 6), (0, 1)])).tolist() == [1, 2, 0]


def test_target_order_constant_labels_is_identity():
    assert target_order(split_of([(1, 2), (2, 1), (0, 3), (3, 0)])).tolist() == [0, 1, 2, 3]


def test_target_batches_span_few_classes_at_large_p():
    ds = generate_dataset(TaskSpec(9973, 300000, 1000))
    order = target_order(ds.train)
    labels = ds.train.labels[order]
    spans = [len(np.unique(labels[i:i + 256])) for i in range(0, len(order) - 256, 256)]
    # about 30 examples per class, so a batch of 256 covers 8 to 10 classes
    assert 8 <= np.median(spans) <= 10


def test_fixed_random_order_replays_fisher_yates():
    draws = rng.fisher_yates_draws(10, 9, rng.stream(7, "fixed_order")).tolist()
    assert draws == [6, 5, 7, 6, 5, 7, 8, 8, 8]
    order = list(range(10))
    for i, j in enumerate(draws):
        order[i], order[j] = order[j], order[i]
    assert fixed_random_order(10, 7).tolist() == order == [6, 5, 7, 0, 1, 2, 8, 3, 4, 9]


def test_fixed_random_small_and_repeatable():
    assert fixed_random_order(1, 0).tolist() == [0]
    assert fixed_random_order(50, 3).tolist() == fixed_random_order(50, 3).tolist()


def test_fresh_shuffle_per_epoch():
    e0, e1 = fresh_shuffle_order(10, 0, 0), fresh_shuffle_order(10, 0, 1)
    assert e0.tolist() == [6, 8, 3, 1, 0, 4, 9, 5, 2, 7]
    assert e1.tolist() == [9, 3, 4, 7, 5, 2, 8, 0, 1, 6]
    assert fresh_shuffle_order(10, 0, 0).tolist() == e0.tolist()
    assert sorted(fresh_shuffle_order(2, 5, 0).tolist()) == [0, 1]


@pytest.mark.parametrize("s,expected", [(50, 199), (99, 101), (150, 66)])
def test_predicted_fundamental_large_p(s, expected):
    assert predicted_fundamental(9973, s) == expected


def test_predicted_fundamental_desk():
    assert predicted_fundamental(97, 9) == 11


@settings(max_examples=200)
@given(st.integers(3, 20000), st.data())
def test_predicted_fundamental_is_round_half_up(p, data):
    s = data.draw(st.integers(1, p - 1))
    assert predicted_fundamental(p, s) == math.floor(Fraction(p, s) + Fraction(1, 2))


def test_plan_batches_cover_order_with_partial_last():
    plan = PermutationPlan(np.arange(300000), 256, 1, "random")
    assert plan.n_batches == 1172
    # 300000 - 1171 * 256
    assert len(plan.batch(1171)) == 224
    assert sum(len(b) for b in plan.batches()) == 300000


@pytest.mark.parametrize("strategy", ["stride", "target", "fixed_random"])
def test_epoch_invariant_strategies(strategy):
    ds = generate_dataset(TaskSpec(31, 300, 100))
    o = Orderer(strategy, ds.train, 32, 0)
    assert o.plan(1).order.tolist() == o.plan(7).order.tolist()


def test_random_strategy_changes_between_epochs():
    ds = generate_dataset(TaskSpec(31, 300, 100))
    o = Orderer("random", ds.train, 32, 0)
    orders = [tuple(o.plan(e).order.tolist()) for e in (1, 2, 3)]
    assert len(set(orders)) >= 2


def test_unknown_strategy_rejected():
    ds = generate_dataset(TaskSpec(31, 300, 100))
    with pytest.raises(ValueError, match="unknown strategy"):
        Orderer("sorted", ds.train, 32, 0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["stride", "target", "fixed_random", "random"]), st.integers(0, 50), st.integers(1, 9))
def test_every_plan_is_a_permutation(strategy, seed, epoch):
    ds = generate_dataset(TaskSpec(13, 80, 20, data_seed=seed))
    plan = Orderer(strategy, ds.train, 7, seed).plan(epoch)
    assert sorted(plan.order.tolist()) == list(range(80))
