"""Uncertainty-calibration quantification: NLL, ECE, Brier and its decomposition.

All metrics pool pixels across the whole evaluated set (never per-image
averages) and use the natural logarithm.  Confidence means the maximum
class probability; binning is equal-width on (0, 1] with the left edge
closed only for exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from segal.core import InvalidInputError

PROB_FLOOR = 1e-12


def _pool(preds, labels):
    """Flatten per-image (H, W, C) maps and (H, W) masks into pixel rows."""
    if isinstance(preds, np.ndarray) and preds.ndim == 3:
        preds, labels = [preds], [labels]
    prob_rows = []
    label_rows = []
    for p, y in zip(preds, labels):
        p = np.asarray(p, dtype=np.float64)
        y = np.asarray(y)
        if p.shape[:2] != y.shape:
            raise InvalidInputError("prediction and label shapes differ")
        prob_rows.append(p.reshape(-1, p.shape[2]))
        label_rows.append(y.reshape(-1))
    probs = np.concatenate(prob_rows)
    ys = np.concatenate(label_rows)
    keep = ys >= 0
    return probs[keep], ys[keep]


def nll(preds, labels) -> float:
    """Mean negative log probability of the true class over labeled pixels."""
    probs, ys = _pool(preds, labels)
    if ys.size == 0:
        raise InvalidInputError("nll needs at least one labeled pixel")
    p_true = np.clip(probs[np.arange(ys.size), ys], PROB_FLOOR, 1.0)
    return float(-np.log(p_true).mean())


def _bin_index(conf: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bins (k-1)/K < conf <= k/K; conf == 0 joins bin 0."""
    idx = np.ceil(conf * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


@dataclass
class ReliabilityBins:
    """Mergeable per-bin accumulators for reliability analysis."""

    bins: int
    counts: np.ndarray = field(default=None)
    confidence_sums: np.ndarray = field(default=None)
    correct_sums: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bins < 1:
            raise InvalidInputError("bins must be >= 1")
        if self.counts is None:
            self.counts = np.zeros(self.bins, dtype=np.int64)
            self.confidence_sums = np.zeros(self.bins)
            self.correct_sums = np.zeros(self.bins)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bins + 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, confidences: np.ndarray, correct: np.ndarray) -> None:
        idx = _bin_index(confidences, self.bins)
        self.counts += np.bincount(idx, minlength=self.bins)
        self.confidence_sums += np.bincount(idx, weights=confidences, minlength=self.bins)
        self.correct_sums += np.bincount(
            idx, weights=correct.astype(np.float64), minlength=self.bins
        )

    def merge(self, other: "ReliabilityBins") -> "ReliabilityBins":
        if other.bins != self.bins:
            raise InvalidInputError("cannot merge bins of different sizes")
        return ReliabilityBins(
            self.bins,
            self.counts + other.counts,
            self.confidence_sums + other.confidence_sums,
            self.correct_sums + other.correct_sums,
        )


def bin_predictions(preds, labels, bins: int) -> ReliabilityBins:
    """Group labeled pixels by confidence (max class probability).

    Correctness compares the argmax prediction with the label; argmax ties
    resolve to the lower class id.
    """
    probs, ys = _pool(preds, labels)
    out = ReliabilityBins(bins)
    if ys.size:
        conf = probs.max(axis=1)
        correct = probs.argmax(axis=1) == ys
        out.add(conf, correct)
    return out


def ece(bins: ReliabilityBins) -> float:
    """Bin-weighted mean absolute gap between confidence and accuracy."""
    n = bins.total
    if n == 0:
        raise InvalidInputError("ece needs at least one binned sample")
    nonempty = bins.counts > 0
    acc = bins.correct_sums[nonempty] / bins.counts[nonempty]
    conf = bins.confidence_sums[nonempty] / bins.counts[nonempty]
    return float((bins.counts[nonempty] / n * np.abs(acc - conf)).sum())


def reliability_diagram(bins: ReliabilityBins):
    """Per-bin (center, mean confidence, accuracy, count) tuples.

    Empty bins are emitted with count 0 and NaN confidence/accuracy so the
    plotting side can skip or mark them.
    """
    rows = []
    for k in range(bins.bins):
        center = (k + 0.5) / bins.bins
        n = int(bins.counts[k])
        if n == 0:
            rows.append((center, float("nan"), float("nan"), 0))
        else:
            rows.append(
                (center, bins.confidence_sums[k] / n, bins.correct_sums[k] / n, n)
            )
    return rows


def brier(preds, labels) -> float:
    """Mean squared simplex distance to the one-hot truth, scaled by 1/C.

    The 1/C scaling keeps the score in [0, 1]: a certain-and-wrong binary
    pixel scores 1, not 2.
    """
    probs, ys = _pool(preds, labels)
    if ys.size == 0:
        raise InvalidInputError("brier needs at least one labeled pixel")
    classes = probs.shape[1]
    onehot = np.zeros_like(probs)
    onehot[np.arange(ys.size), ys] = 1.0
    return float(((probs - onehot) ** 2).sum(axis=1).mean() / classes)


def brier_decomposition(preds, labels, bins: int):
    """(reliability, resolution, uncertainty) of the positive-class forecast.

    Binary only; forecasts are binned like confidences and the identity
    REL - RES + UNC = Brier-of-bin-mean-forecasts holds exactly.
    """
    probs, ys = _pool(preds, labels)
    if ys.size == 0:
        raise InvalidInputError("brier_decomposition needs labeled pixels")
    if probs.shape[1] != 2:
        raise InvalidInputError("brier decomposition is defined for binary tasks only")
    forecasts = probs[:, 1]
    outcomes = (ys == 1).astype(np.float64)
    n = outcomes.size
    base_rate = outcomes.mean()
    idx = _bin_index(forecasts, bins)
    counts = np.bincount(idx, minlength=bins)
    nonempty = counts > 0
    mean_forecast = np.zeros(bins)
    mean_outcome = np.zeros(bins)
    mean_forecast[nonempty] = (
        np.bincount(idx, weights=forecasts, minlength=bins)[nonempty] / counts[nonempty]
    )
    mean_outcome[nonempty] = (
        np.bincount(idx, weights=outcomes, minlength=bins)[nonempty] / counts[nonempty]
    )
    weights = counts / n
    reliability = float((weights * (mean_forecast - mean_outcome) ** 2).sum())
    resolution = float((weights * (mean_outcome - base_rate) ** 2).sum())
    uncertainty = float(base_rate * (1.0 - base_rate))
    return reliability, resolution, uncertainty


def uncertainty_histogram(maps, selections, kind, classes: int, bins: int = 10):
    """Normalized distribution of selected pixels' rescaled uncertainty.

    Values are divided by the acquisition function's analytic maximum so
    histograms are comparable across scoring rules; bin masses sum to 1.
    """
    values = []
    for u, sel in zip(maps, selections):
        sel = np.asarray(sel, dtype=bool)
        values.append(np.asarray(u)[sel])
    values = np.concatenate(values) if values else np.empty(0)
    if values.size == 0:
        raise InvalidInputError("uncertainty_histogram needs a non-empty selection")
    scaled = values / kind.analytic_max(classes)
    hist, edges = np.histogram(scaled, bins=bins, range=(0.0, 1.0))
    return hist / values.size, edges


@dataclass
class CalibrationReport:
    """All calibration numbers for one model snapshot at one step."""

    step: int
    nll: float
    ece: float
    brier: float
    reliability: float
    resolution: float
    uncertainty: float
    bins: ReliabilityBins


def calibration_report(preds, labels, step: int, bins: int = 10) -> CalibrationReport:
    """Evaluate every calibration metric on pooled labeled pixels."""
    binned = bin_predictions(preds, labels, bins)
    rel, res, unc = brier_decomposition(preds, labels, bins)
    return CalibrationReport(
        step=step,
        nll=nll(preds, labels),
        ece=ece(binned),
        brier=brier(preds, labels),
        reliability=rel,
        resolution=res,
        uncertainty=unc,
        bins=binned,
    )
