import numpy as np
import pytest

from pairloc import LossWeights, combined_loss, pairwise_loss, sigmoid, \
    sigmoid_ce, total_loss, unary_loss
from pairloc.data import Bag, Selection


def naive_ce(x, y):
    p = 1.0 / (1.0 + np.exp(-x))
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def test_sigmoid_matches_naive_in_safe_range():
    rng = np.random.default_rng(0)
    x = rng.uniform(-20, 20, size=500)
    assert np.allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-14)


def test_sigmoid_extremes_do_not_overflow():
    assert sigmoid(1000.0) == 1.0
    assert sigmoid(-1000.0) == pytest.approx(0.0, abs=1e-300)
    assert sigmoid(0.0) == 0.5


def test_sigmoid_ce_matches_naive_form():
    rng = np.random.default_rng(1)
    # range where the naive form itself is still accurate (beyond ~20 the
    # log(1-p) term loses digits)
    x = rng.uniform(-15, 15, size=1000)
    y = rng.uniform(0, 1, size=1000)
    assert np.allclose(sigmoid_ce(x, y), naive_ce(x, y), rtol=1e-9, atol=1e-9)


def test_sigmoid_ce_is_finite_for_huge_logits():
    vals = sigmoid_ce(np.array([800.0, -800.0]), np.array([0.0, 1.0]))
    assert np.all(np.isfinite(vals))
    assert vals[0] == pytest.approx(800.0)
    assert vals[1] == pytest.approx(800.0)


def test_sigmoid_ce_rejects_bad_labels():
    with pytest.raises(ValueError):
        sigmoid_ce(0.0, 1.5)
    with pytest.raises(ValueError):
        sigmoid_ce(np.zeros(3), np.array([0.0, -0.1, 1.0]))


def test_ce_affine_in_label():
    # ce(x, y) = ce(x, 0) - y*x, exactly, in the stable form
    rng = np.random.default_rng(2)
    for _ in range(200):
        x = rng.uniform(-30, 30)
        y = rng.uniform(0, 1)
        assert abs(sigmoid_ce(x, y) - (sigmoid_ce(x, 0.0) - y * x)) < 1e-9


def _two_bags():
    a = Bag("a", [np.array([1.0]), np.array([2.0])], {"c"})
    b = Bag("b", [np.array([3.0]), np.array([4.0])], {"c"})
    return a, b


def test_unary_loss_sums_over_all_proposals():
    a, b = _two_bags()
    sel = Selection("c", {"a": 0, "b": 1})
    scores = {"a": np.array([2.0, -1.0]), "b": np.array([0.5, 3.0])}
    expect = (sigmoid_ce(2.0, 1) + sigmoid_ce(-1.0, 0)
              + sigmoid_ce(0.5, 0) + sigmoid_ce(3.0, 1))
    assert unary_loss(scores, sel, [a, b]) == pytest.approx(expect)


def test_unary_loss_missing_bag_raises():
    a, b = _two_bags()
    with pytest.raises(KeyError):
        unary_loss({"a": np.zeros(2)}, Selection("c", {"a": 0, "b": 0}), [a, b])


def test_pairwise_loss_ordered_pairs():
    a, b = _two_bags()
    sel = Selection("c", {"a": 0, "b": 1})
    scores = {}
    rng = np.random.default_rng(3)
    for i in range(2):
        for j in range(2):
            scores[("a", i, "b", j)] = rng.normal()
            scores[("b", j, "a", i)] = rng.normal()
    got = pairwise_loss(scores, sel, [a, b])
    expect = 0.0
    for i in range(2):
        for j in range(2):
            r = 1.0 if (i, j) == (0, 1) else 0.0
            expect += sigmoid_ce(scores[("a", i, "b", j)], r)
            expect += sigmoid_ce(scores[("b", j, "a", i)], r)
    assert got == pytest.approx(expect)


def test_pairwise_loss_rejects_same_bag_pairs():
    a, b = _two_bags()
    with pytest.raises(ValueError):
        pairwise_loss({("a", 0, "a", 1): 0.0}, Selection("c", {}), [a, b])


def test_combined_and_total():
    w = LossWeights(alpha=0.25)
    assert combined_loss(2.0, 8.0, w) == pytest.approx(4.0)
    assert total_loss([1.0, 2.5, 3.0]) == pytest.approx(6.5)
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)
