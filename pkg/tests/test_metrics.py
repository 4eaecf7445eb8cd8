import math

import numpy as np
import pytest

from vlfat.errors import InvalidInputError
from vlfat.metrics import (
    auroc_ova,
    balanced_accuracy,
    confusion_matrix,
    evaluate_predictions,
)
from vlfat.rng import RngStream

from helpers import auroc_pairs


class TestConfusion:
    def test_perfect_is_diagonal(self):
        y = [0, 1, 2, 2]
        counts = confusion_matrix(y, y, 3)
        assert np.array_equal(counts, np.diag([1, 1, 2]))

    def test_single_off_diagonal(self):
        counts = confusion_matrix([2], [0], 3)
        expected = np.zeros((3, 3), dtype=np.int64)
        expected[2, 0] = 1
        assert np.array_equal(counts, expected)

    def test_total_count_conserved(self):
        rng = RngStream(1, 0)
        y_true = rng.integers(0, 4, (50,))
        y_pred = rng.integers(0, 4, (50,))
        assert confusion_matrix(y_true, y_pred, 4).sum() == 50

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidInputError):
            confusion_matrix([0, 5], [0, 1], 3)


class TestBalancedAccuracy:
    def test_perfect(self):
        assert balanced_accuracy([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_hand_counted(self):
        assert balanced_accuracy([0, 0, 1, 1], [0, 1, 1, 1], 2) == 0.75

    def test_binary_all_wrong(self):
        assert balanced_accuracy([0, 1], [1, 0], 2) == 0.0

    def test_absent_class_rejected(self):
        with pytest.raises(InvalidInputError):
            balanced_accuracy([0, 0], [0, 1], 2)

    def test_matches_confusion_formula(self):
        rng = RngStream(2, 0)
        for _ in range(25):
            y_true = np.concatenate([np.arange(3), rng.integers(0, 3, (30,))])
            y_pred = rng.integers(0, 3, (33,))
            counts = confusion_matrix(y_true, y_pred, 3)
            expected = (np.diag(counts) / counts.sum(axis=1)).mean()
            assert balanced_accuracy(y_true, y_pred, 3) == expected

    def test_relabeling_invariance(self):
        rng = RngStream(2, 1)
        y_true = np.concatenate([np.arange(3), rng.integers(0, 3, (20,))])
        y_pred = rng.integers(0, 3, (23,))
        perm = np.array([2, 0, 1])
        assert balanced_accuracy(y_true, y_pred, 3) == pytest.approx(
            balanced_accuracy(perm[y_true], perm[y_pred], 3), abs=1e-15
        )


class TestAurocOva:
    def test_perfect_ranking(self):
        macro, per_class, undefined = auroc_ova(
            [0, 1], [[0.8, 0.2], [0.2, 0.8]], 2
        )
        assert per_class == [1.0, 1.0] and macro == 1.0 and undefined == []

    def test_all_ties_give_half(self):
        macro, per_class, _ = auroc_ova([0, 1, 0, 1], np.full((4, 2), 0.3), 2)
        assert per_class == [0.5, 0.5] and macro == 0.5

    def test_matches_pair_counting_oracle(self):
        rng = RngStream(3, 0)
        for trial in range(100):
            n = int(rng.integers(6, 40))
            y = np.concatenate([np.arange(3), rng.integers(0, 3, (n,))])
            # quantized scores force ties through the tie-handling path
            scores = np.round(rng.uniform((y.size, 3)), 1)
            macro, per_class, _ = auroc_ova(y, scores, 3)
            for c in range(3):
                assert per_class[c] == auroc_pairs(y, scores[:, c], c)

    def test_monotone_transform_invariance(self):
        rng = RngStream(3, 1)
        y = np.concatenate([np.arange(3), rng.integers(0, 3, (20,))])
        scores = rng.uniform((y.size, 3))
        base = auroc_ova(y, scores, 3)
        warped = auroc_ova(y, np.exp(4.0 * scores), 3)
        assert base[1] == warped[1]

    def test_undefined_class_excluded_with_flag(self):
        y = [0, 0, 1, 1]  # class 2 never appears
        scores = RngStream(3, 2).uniform((4, 3))
        macro, per_class, undefined = auroc_ova(y, scores, 3)
        assert undefined == [2]
        assert math.isnan(per_class[2])
        assert macro == pytest.approx((per_class[0] + per_class[1]) / 2)


class TestEvaluatePredictions:
    def test_bundles_consistently(self):
        rng = RngStream(4, 0)
        y_true = np.concatenate([np.arange(4), rng.integers(0, 4, (36,))])
        scores = rng.uniform((40, 4))
        y_pred = scores.argmax(axis=1)
        result = evaluate_predictions(y_true, y_pred, scores, 4)
        assert result.bacc == balanced_accuracy(y_true, y_pred, 4)
        assert result.confusion.sum() == 40
        payload = result.to_dict()
        assert set(payload) == {
            "bacc", "auroc_macro", "per_class_auroc", "confusion", "undefined_classes",
        }
