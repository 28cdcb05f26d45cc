import math

import numpy as np
import pytest

from oracles import naive_bin_index, naive_binned_brier
from segal.calibration import (
    ReliabilityBins,
    bin_predictions,
    brier,
    brier_decomposition,
    calibration_report,
    ece,
    nll,
    reliability_diagram,
    uncertainty_histogram,
)
from segal.acquisition import AcquisitionFunction
from segal.core import InvalidInputError


def as_map(prob_rows):
    """One-row (1, N, C) probability map from per-pixel class tuples."""
    return np.asarray([prob_rows], dtype=np.float64)


def as_labels(row):
    return np.asarray([row], dtype=np.int64)


def binary_stream(forecasts, outcomes):
    """(preds, labels) pair for a stream of positive-class forecasts."""
    forecasts = np.asarray(forecasts, dtype=np.float64)
    preds = np.stack([1.0 - forecasts, forecasts], axis=1)[None, :, :]
    return preds, as_labels(np.asarray(outcomes, dtype=np.int64))


class TestNll:
    def test_perfect_predictions(self):
        preds = as_map([(1.0, 0.0), (0.0, 1.0)])
        assert nll(preds, as_labels([0, 1])) == 0.0

    def test_uniform_predictions(self):
        preds = as_map([(0.5, 0.5)] * 4)
        assert nll(preds, as_labels([0, 1, 0, 1])) == pytest.approx(math.log(2), abs=1e-12)

    def test_three_pixel_hand_case(self):
        preds = as_map([(0.9, 0.1), (0.4, 0.6), (0.3, 0.7)])
        labels = as_labels([0, 1, 0])
        expected = -(math.log(0.9) + math.log(0.6) + math.log(0.3)) / 3.0
        assert nll(preds, labels) == pytest.approx(expected, abs=1e-12)

    def test_unlabeled_pixels_skipped(self):
        preds = as_map([(0.9, 0.1), (0.2, 0.8)])
        assert nll(preds, as_labels([0, -1])) == pytest.approx(-math.log(0.9), abs=1e-12)

    def test_no_labels_rejected(self):
        with pytest.raises(InvalidInputError):
            nll(as_map([(0.5, 0.5)]), as_labels([-1]))


class TestBinning:
    def test_single_bin_holds_everything(self):
        rng = np.random.default_rng(0)
        raw = rng.random((1, 50, 2))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 2, 50))
        bins = bin_predictions(preds, labels, 1)
        assert bins.counts.tolist() == [50]

    def test_confidence_one_in_last_bin(self):
        preds = as_map([(1.0, 0.0)])
        bins = bin_predictions(preds, as_labels([0]), 10)
        assert bins.counts[9] == 1

    def test_matches_bruteforce_membership(self):
        rng = np.random.default_rng(1)
        raw = rng.random((1, 100, 3))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 3, 100))
        bins = bin_predictions(preds, labels, 10)
        conf = preds[0].max(axis=1)
        expected = np.zeros(10, dtype=int)
        for c in conf:
            expected[naive_bin_index(float(c), 10)] += 1
        np.testing.assert_array_equal(bins.counts, expected)

    def test_merge_is_concatenation(self):
        rng = np.random.default_rng(2)
        raw = rng.random((1, 60, 2))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 2, 60))
        whole = bin_predictions(preds, labels, 8)
        left = bin_predictions(preds[:, :25], labels[:, :25], 8)
        right = bin_predictions(preds[:, 25:], labels[:, 25:], 8)
        merged = left.merge(right)
        np.testing.assert_array_equal(merged.counts, whole.counts)
        np.testing.assert_allclose(merged.confidence_sums, whole.confidence_sums)
        np.testing.assert_allclose(merged.correct_sums, whole.correct_sums)


class TestEce:
    def test_perfect_confident_predictions(self):
        preds = as_map([(1.0, 0.0), (0.0, 1.0)])
        bins = bin_predictions(preds, as_labels([0, 1]), 10)
        assert ece(bins) == 0.0

    def test_single_bin_gap(self):
        bins = ReliabilityBins(1)
        bins.add(np.full(10, 0.8), np.array([1] * 6 + [0] * 4))
        assert ece(bins) == pytest.approx(0.2, abs=1e-12)

    def test_two_bin_hand_case(self):
        bins = ReliabilityBins(2)
        bins.add(np.full(4, 0.9), np.array([1, 1, 1, 0]))   # conf .9, acc .75
        bins.add(np.full(6, 0.6), np.array([1, 1, 1, 0, 0, 0]))  # conf .6, acc .5
        assert ece(bins) == pytest.approx(0.4 * 0.15 + 0.6 * 0.1, abs=1e-12)

    def test_empty_bins_do_not_move_ece(self):
        bins5 = ReliabilityBins(5)
        bins5.add(np.full(8, 0.95), np.ones(8))
        coarse = ReliabilityBins(1)
        coarse.add(np.full(8, 0.95), np.ones(8))
        assert ece(bins5) == pytest.approx(ece(coarse), abs=1e-12)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(3)
        raw = rng.random((1, 500, 2))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 2, 500))
        value = ece(bin_predictions(preds, labels, 10))
        assert 0.0 <= value <= 1.0


class TestReliabilityDiagram:
    def _calibrated_stream(self, n, rng):
        conf = rng.uniform(0.5, 1.0, n)
        correct = rng.random(n) < conf
        labels = np.where(correct, 1, 0)
        preds = np.stack([1.0 - conf, conf], axis=1)[None, :, :]
        return preds, as_labels(labels)

    def test_calibrated_stream_has_small_gaps(self):
        preds, labels = self._calibrated_stream(10_000, np.random.default_rng(4))
        rows = reliability_diagram(bin_predictions(preds, labels, 10))
        for _, conf, acc, count in rows:
            if count > 0:
                assert abs(acc - conf) < 0.05

    def test_single_sample(self):
        rows = reliability_diagram(bin_predictions(as_map([(0.7, 0.3)]), as_labels([0]), 10))
        assert sum(1 for r in rows if r[3] > 0) == 1

    def test_overconfident_stream_gap(self):
        preds, labels = binary_stream([0.9] * 100, [1] * 60 + [0] * 40)
        rows = reliability_diagram(bin_predictions(preds, labels, 10))
        gap = [abs(a - c) for _, c, a, n in rows if n > 0]
        assert gap == [pytest.approx(0.3, abs=1e-12)]


class TestBrier:
    def test_perfect(self):
        preds = as_map([(1.0, 0.0), (0.0, 1.0)])
        assert brier(preds, as_labels([0, 1])) == 0.0

    def test_uniform_binary_pixel(self):
        assert brier(as_map([(0.5, 0.5)]), as_labels([0])) == pytest.approx(0.25)
        assert brier(as_map([(0.5, 0.5)]), as_labels([1])) == pytest.approx(0.25)

    def test_certain_wrong_pixel_scores_one(self):
        assert brier(as_map([(1.0, 0.0)]), as_labels([1])) == pytest.approx(1.0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        raw = rng.random((1, 5, 3))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 3, 5))
        total = 0.0
        for i in range(5):
            for c in range(3):
                y = 1.0 if labels[0, i] == c else 0.0
                total += (preds[0, i, c] - y) ** 2
        assert brier(preds, labels) == pytest.approx(total / (5 * 3), abs=1e-12)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(6)
        raw = rng.random((1, 300, 4))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 4, 300))
        assert 0.0 <= brier(preds, labels) <= 1.0


class TestBrierDecomposition:
    def test_constant_forecast_at_base_rate(self):
        preds, labels = binary_stream([0.7] * 10, [1] * 7 + [0] * 3)
        rel, res, unc = brier_decomposition(preds, labels, 10)
        assert rel == pytest.approx(0.0, abs=1e-12)
        assert res == pytest.approx(0.0, abs=1e-12)
        assert unc == pytest.approx(0.21, abs=1e-12)

    def test_perfect_deterministic_forecasts(self):
        preds, labels = binary_stream([1.0, 0.0, 1.0, 0.0], [1, 0, 1, 0])
        rel, res, unc = brier_decomposition(preds, labels, 10)
        assert rel == pytest.approx(0.0, abs=1e-12)
        assert res == pytest.approx(unc, abs=1e-12)
        assert rel - res + unc == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("bins", [1, 5, 10, 20])
    def test_identity_on_random_streams(self, bins):
        rng = np.random.default_rng(7)
        forecasts = rng.random(1000)
        outcomes = (rng.random(1000) < forecasts).astype(int)
        preds, labels = binary_stream(forecasts, outcomes)
        rel, res, unc = brier_decomposition(preds, labels, bins)
        assert rel - res + unc == pytest.approx(
            naive_binned_brier(forecasts, outcomes, bins), abs=1e-10
        )

    def test_single_bin_resolution_is_zero(self):
        rng = np.random.default_rng(8)
        forecasts = rng.random(200)
        outcomes = (rng.random(200) < 0.4).astype(int)
        preds, labels = binary_stream(forecasts, outcomes)
        rel, res, _ = brier_decomposition(preds, labels, 1)
        assert res == 0.0
        assert rel == pytest.approx((forecasts.mean() - outcomes.mean()) ** 2, abs=1e-12)

    def test_multiclass_rejected(self):
        rng = np.random.default_rng(9)
        raw = rng.random((1, 10, 3))
        preds = raw / raw.sum(axis=2, keepdims=True)
        with pytest.raises(InvalidInputError):
            brier_decomposition(preds, as_labels(rng.integers(0, 3, 10)), 10)


class TestPermutationInvariance:
    def test_metrics_ignore_pixel_order(self):
        rng = np.random.default_rng(10)
        raw = rng.random((1, 80, 2))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 2, 80))
        perm = rng.permutation(80)
        shuffled_preds = preds[:, perm]
        shuffled_labels = labels[:, perm]
        assert nll(preds, labels) == pytest.approx(nll(shuffled_preds, shuffled_labels), abs=1e-12)
        assert brier(preds, labels) == pytest.approx(brier(shuffled_preds, shuffled_labels), abs=1e-12)
        assert ece(bin_predictions(preds, labels, 10)) == pytest.approx(
            ece(bin_predictions(shuffled_preds, shuffled_labels, 10)), abs=1e-12
        )


class TestUncertaintyHistogram:
    def test_all_max_in_last_bin(self):
        u = np.full((4, 4), np.log(2.0))
        hist, _ = uncertainty_histogram([u], [np.ones((4, 4), bool)],
                                        AcquisitionFunction.ENTROPY, 2, bins=10)
        np.testing.assert_allclose(hist, [0] * 9 + [1.0])

    def test_all_zero_in_first_bin(self):
        hist, _ = uncertainty_histogram([np.zeros((4, 4))], [np.ones((4, 4), bool)],
                                        AcquisitionFunction.VARRATIO, 2, bins=10)
        np.testing.assert_allclose(hist, [1.0] + [0] * 9)

    def test_uniform_values_spread_evenly(self):
        rng = np.random.default_rng(11)
        u = rng.random((100, 100))
        hist, _ = uncertainty_histogram([u], [np.ones((100, 100), bool)],
                                        AcquisitionFunction.RANDOM, 2, bins=10)
        assert hist.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(hist, 0.1, atol=0.02)

    def test_empty_selection_rejected(self):
        with pytest.raises(InvalidInputError):
            uncertainty_histogram([np.ones((3, 3))], [np.zeros((3, 3), bool)],
                                  AcquisitionFunction.ENTROPY, 2)


class TestCalibrationReport:
    def test_fields_populated_and_consistent(self):
        rng = np.random.default_rng(12)
        raw = rng.random((1, 400, 2))
        preds = raw / raw.sum(axis=2, keepdims=True)
        labels = as_labels(rng.integers(0, 2, 400))
        report = calibration_report(preds, labels, step=3, bins=10)
        assert report.step == 3
        assert report.nll == pytest.approx(nll(preds, labels))
        assert report.brier == pytest.approx(brier(preds, labels))
        assert 0.0 <= report.ece <= 1.0
        assert 0.0 <= report.uncertainty <= 0.25
