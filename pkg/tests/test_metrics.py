from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geomaml.metrics import (
    ConfusionMatrix,
    UndefinedMetricError,
    accuracy,
    cohen_kappa,
    confusion,
    iou_per_class,
    mean_iou,
)

from oracles import kappa_sum, miou_sets

WORKED = ConfusionMatrix([[1, 1], [0, 2]])


def test_confusion_hand_count():
    assert confusion([0, 0, 1, 1], [0, 1, 1, 1], 2) == WORKED


def test_confusion_perfect_is_diagonal():
    cm = confusion([0, 1, 2, 2, 1], [0, 1, 2, 2, 1], 3)
    assert np.array_equal(cm.counts, np.diag([1, 2, 2]))


def test_confusion_empty():
    cm = confusion([], [], 3)
    assert cm.total == 0 and not cm.counts.any()


def test_confusion_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        confusion([0, 2], [0, 1], 2)
    with pytest.raises(ValueError, match="predicted"):
        confusion([0, 1], [0, 5], 2)


def test_confusion_ignores_marked_truth():
    cm = confusion([0, -1, 1], [0, 1, 0], 2)
    assert cm.total == 2


def test_accuracy_examples():
    assert accuracy(ConfusionMatrix(np.diag([3, 4]))) == 1.0
    assert accuracy(WORKED) == 0.75
    assert accuracy(ConfusionMatrix([[0, 5], [5, 0]])) == 0.0
    with pytest.raises(UndefinedMetricError):
        accuracy(ConfusionMatrix(np.zeros((2, 2))))


def test_kappa_examples():
    assert cohen_kappa(ConfusionMatrix(np.diag([2, 3, 1]))) == 1.0
    assert cohen_kappa(confusion([0, 0, 1, 1], [0, 0, 0, 0], 2)) == 0.0
    assert cohen_kappa(WORKED) == 0.5


def test_kappa_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        cohen_kappa(ConfusionMatrix([[4, 0], [0, 0]]))


def test_miou_examples():
    assert mean_iou(ConfusionMatrix(np.diag([1, 2, 3]))) == 1.0
    assert mean_iou(WORKED) == 7 / 12
    assert mean_iou(WORKED, ignore={1}) == 0.5


def test_miou_skips_absent_classes():
    cm = ConfusionMatrix([[2, 0, 0], [0, 0, 0], [1, 0, 1]])
    assert np.isnan(iou_per_class(cm)[1])
    assert mean_iou(cm) == pytest.approx((2 / 3 + 1 / 2) / 2)


def test_miou_all_ignored():
    with pytest.raises(UndefinedMetricError):
        mean_iou(WORKED, ignore={0, 1})


def _kappa_exact(counts):
    c = [[Fraction(int(v)) for v in row] for row in counts]
    n = len(c)
    total = sum(sum(r) for r in c)
    p_o = sum(c[i][i] for i in range(n)) / total
    p_e = sum(sum(c[i]) * sum(c[j][i] for j in range(n)) for i in range(n)) / total ** 2
    return (p_o - p_e) / (1 - p_e)


def test_metrics_match_brute_force_on_random_matrices():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 6))
        counts = rng.integers(0, 20, size=(n, n))
        cm = ConfusionMatrix(counts)
        if cm.total == 0:
            continue
        try:
            k = cohen_kappa(cm)
        except UndefinedMetricError:
            continue
        assert abs(k - kappa_sum(counts)) <= 1e-12
        assert abs(k - float(_kappa_exact(counts))) <= 1e-12
        assert -1.0 <= k <= 1.0
        assert 0.0 <= accuracy(cm) <= 1.0
        assert 0.0 <= mean_iou(cm) <= 1.0
        checked += 1


def test_miou_matches_pixel_set_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 5))
        truth = rng.integers(0, n, size=(5, 6))
        pred = rng.integers(0, n, size=(5, 6))
        ignore = {int(rng.integers(0, n))} if rng.random() < 0.3 else set()
        cm = confusion(truth, pred, n)
        assert mean_iou(cm, ignore) == miou_sets(truth, pred, n, ignore)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_confusion_total_and_ranges(pairs):
    t, p = zip(*pairs)
    cm = confusion(t, p, 4)
    assert cm.total == len(pairs)
    assert 0 <= accuracy(cm) <= 1
    assert 0 <= mean_iou(cm) <= 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40),
       st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40))
def test_confusion_is_additive(a, b):
    ta, pa = zip(*a)
    tb, pb = zip(*b)
    assert confusion(ta, pa, 3) + confusion(tb, pb, 3) == confusion(ta + tb, pa + pb, 3)
