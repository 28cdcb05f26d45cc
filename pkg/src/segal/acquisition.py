"""Uncertainty scoring and annotation-selection strategies.

Two ways to spend an annotation budget: rank whole pool images by summed
pixel uncertainty, or slide a fixed-size window over every pool image and
greedily pick the highest-scoring non-overlapping windows.  Both run on
the same per-pixel uncertainty maps (VarRatio / Entropy / BALD / Random).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from segal.core import UNLABELED, InvalidInputError
from segal.model import Parameters, mc_predict


class AcquisitionFunction(Enum):
    RANDOM = "random"
    VARRATIO = "varratio"
    ENTROPY = "entropy"
    BALD = "bald"

    def analytic_max(self, classes: int) -> float:
        """Largest value the per-pixel score can take for C classes."""
        if self is AcquisitionFunction.VARRATIO:
            return 1.0 - 1.0 / classes
        if self is AcquisitionFunction.RANDOM:
            return 1.0
        return float(np.log(classes))


class PoolExhaustedWarning(UserWarning):
    """The pool could not supply as many selections as requested."""


def _plogp(p):
    return np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)


def varratio_map(p: np.ndarray) -> np.ndarray:
    """Per-pixel 1 - max class probability; 0 when the model is certain."""
    return np.maximum(1.0 - np.asarray(p).max(axis=2), 0.0)


def entropy_map(p: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy (natural log, 0*log 0 := 0)."""
    return np.maximum(-_plogp(np.asarray(p)).sum(axis=2), 0.0)


def bald_map(stack: np.ndarray) -> np.ndarray:
    """Mutual information: entropy of the mean map minus mean pass entropy.

    Clamped at 0 to absorb floating-point negatives; identical passes give
    exactly 0 everywhere.
    """
    stack = np.asarray(stack)
    if stack.ndim != 4 or stack.shape[0] < 1:
        raise InvalidInputError("bald_map needs a (T, H, W, C) stack")
    per_pass_entropy = -_plogp(stack).sum(axis=3)
    return np.maximum(entropy_map(stack.mean(axis=0)) - per_pass_entropy.mean(axis=0), 0.0)


def random_map(shape, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform [0,1) scores so random selection reuses the same paths."""
    return rng.random(shape)


def uncertainty_map(
    kind: AcquisitionFunction,
    mean_map: np.ndarray,
    stack: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Dispatch to the scoring rule for ``kind``."""
    if kind is AcquisitionFunction.RANDOM:
        return random_map(mean_map.shape[:2], rng)
    if kind is AcquisitionFunction.VARRATIO:
        return varratio_map(mean_map)
    if kind is AcquisitionFunction.ENTROPY:
        return entropy_map(mean_map)
    return bald_map(stack)


def image_utility(u: np.ndarray) -> float:
    """Whole-image informativeness: the sum of all pixel uncertainties."""
    return float(np.asarray(u).sum())


def select_images(scores, count: int) -> list:
    """Pick the ``count`` highest-utility image ids, ties to smaller id."""
    if not scores:
        raise InvalidInputError("select_images needs a non-empty pool")
    ranked = sorted(scores, key=lambda s: (-s[1], s[0]))
    if len(ranked) < count:
        warnings.warn(
            f"pool has {len(ranked)} images, requested {count}", PoolExhaustedWarning
        )
    return [image_id for image_id, _ in ranked[:count]]


@dataclass(frozen=True, order=True)
class Region:
    """An axis-aligned window inside a named pool image."""

    image_id: str
    top: int
    left: int
    width: int
    height: int

    def rows(self):
        return slice(self.top, self.top + self.height)

    def cols(self):
        return slice(self.left, self.left + self.width)

    def check_inside(self, shape) -> None:
        h, w = shape[:2]
        if self.top < 0 or self.left < 0 or self.top + self.height > h or self.left + self.width > w:
            raise InvalidInputError(f"region {self} outside {h}x{w} image")


@dataclass(frozen=True)
class RegionScoringConfig:
    kernel_width: int = 16
    kernel_height: int = 16
    stride: int = 8
    kernel_value: float = 1.0
    regions_per_step: int = 20

    def __post_init__(self):
        if self.kernel_width < 1 or self.kernel_height < 1 or self.stride < 1:
            raise InvalidInputError("window size and stride must be >= 1")
        if self.kernel_value <= 0 or self.regions_per_step < 1:
            raise InvalidInputError("kernel_value > 0 and regions_per_step >= 1 required")


def mask_selected(u: np.ndarray, regions: list[Region]) -> np.ndarray:
    """Zero the uncertainty of every pixel covered by the given regions."""
    out = np.array(u, dtype=np.float64, copy=True)
    for r in regions:
        r.check_inside(out.shape)
        out[r.rows(), r.cols()] = 0.0
    return out


def _window_sums(values: np.ndarray, kw: int, kh: int, stride: int):
    """Sum of every stride-grid window via a summed-area table.

    Returns (tops, lefts, sums) where sums[i, j] covers the window whose
    top-left corner is (tops[i], lefts[j]).
    """
    h, w = values.shape
    if kh > h or kw > w:
        raise InvalidInputError(f"{kh}x{kw} window does not fit in {h}x{w} map")
    sat = np.zeros((h + 1, w + 1), dtype=values.dtype)
    np.cumsum(np.cumsum(values, axis=0), axis=1, out=sat[1:, 1:])
    tops = np.arange(0, h - kh + 1, stride)
    lefts = np.arange(0, w - kw + 1, stride)
    r0 = tops[:, None]
    c0 = lefts[None, :]
    sums = (
        sat[r0 + kh, c0 + kw]
        - sat[r0, c0 + kw]
        - sat[r0 + kh, c0]
        + sat[r0, c0]
    )
    return tops, lefts, sums


def region_scores(u: np.ndarray, cfg: RegionScoringConfig):
    """Score every window placement: kernel_value times the window sum.

    Placements run over the stride grid with the window fully inside the
    image.  Returns (tops, lefts, scores) with scores[i, j] for the
    placement at (tops[i], lefts[j]).
    """
    u = np.asarray(u, dtype=np.float64)
    tops, lefts, sums = _window_sums(u, cfg.kernel_width, cfg.kernel_height, cfg.stride)
    return tops, lefts, cfg.kernel_value * sums


def select_regions(
    pool_maps: dict,
    cfg: RegionScoringConfig,
    already_selected: dict | None = None,
) -> list[Region]:
    """Greedily pick the most uncertain non-overlapping windows.

    Per iteration: score all feasible placements in every pool image, take
    the global maximum (ties to smaller image id, then smaller top, then
    smaller left), claim its pixels, repeat ``regions_per_step`` times.
    Claimed pixels are zeroed and windows touching any claimed pixel stop
    being feasible, so selections never overlap each other or any region
    selected in an earlier step.  Stops early (with a warning) when no
    positive-score feasible placement remains.
    """
    if not pool_maps:
        raise InvalidInputError("select_regions needs a non-empty pool")
    already_selected = already_selected or {}
    ids = sorted(pool_maps)
    work = {}
    occupied = {}
    for image_id in ids:
        prior = already_selected.get(image_id, [])
        work[image_id] = mask_selected(pool_maps[image_id], prior)
        occ = np.zeros(work[image_id].shape, dtype=np.int64)
        for r in prior:
            occ[r.rows(), r.cols()] = 1
        occupied[image_id] = occ

    selected: list[Region] = []
    for _ in range(cfg.regions_per_step):
        best = None  # (score, image_id, top, left)
        for image_id in ids:
            tops, lefts, scores = region_scores(work[image_id], cfg)
            _, _, overlap = _window_sums(
                occupied[image_id], cfg.kernel_width, cfg.kernel_height, cfg.stride
            )
            feasible = overlap == 0
            if not feasible.any():
                continue
            masked = np.where(feasible, scores, -np.inf)
            flat = int(np.argmax(masked))  # first max in C order: smallest top, left
            i, j = np.unravel_index(flat, masked.shape)
            score = masked[i, j]
            if best is None or score > best[0]:
                best = (float(score), image_id, int(tops[i]), int(lefts[j]))
        if best is None or best[0] <= 0.0:
            warnings.warn(
                f"selected {len(selected)} of {cfg.regions_per_step} regions; "
                "no positive-uncertainty placement left",
                PoolExhaustedWarning,
            )
            break
        score, image_id, top, left = best
        region = Region(image_id, top, left, cfg.kernel_width, cfg.kernel_height)
        selected.append(region)
        work[image_id][region.rows(), region.cols()] = 0.0
        occupied[image_id][region.rows(), region.cols()] = 1
    return selected


def prepare_pseudo_labels(
    params: Parameters,
    image: np.ndarray,
    human_mask: np.ndarray,
    human_labels: np.ndarray,
    passes: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Compose labels for display: human where annotated, model elsewhere.

    Unannotated pixels take the argmax of the MC-averaged prediction (ties
    to the lower class id).  Guidance data only; the training mask stays
    the human mask.
    """
    mean_map, _ = mc_predict(params, image, passes, rng)
    predicted = np.argmax(mean_map, axis=2)
    return np.where(np.asarray(human_mask, dtype=bool), human_labels, predicted)


@dataclass
class ImageAnnotation:
    """Annotation bookkeeping for one pool image.

    ``human_mask`` is 1 exactly on the union of ``regions`` under the
    region strategy (or everywhere for a fully annotated image); labels
    and contours hold UNLABELED outside it.  ``pseudo_labels`` is display
    data refreshed from the latest model and never trained on.
    """

    human_mask: np.ndarray
    human_labels: np.ndarray
    human_contours: np.ndarray
    pseudo_labels: np.ndarray | None = None
    regions: list[Region] = field(default_factory=list)

    @classmethod
    def empty(cls, height: int, width: int) -> "ImageAnnotation":
        return cls(
            human_mask=np.zeros((height, width), dtype=np.int64),
            human_labels=np.full((height, width), UNLABELED, dtype=np.int64),
            human_contours=np.full((height, width), UNLABELED, dtype=np.int64),
        )

    def labeled_pixels(self) -> int:
        return int(self.human_mask.sum())

    def add_region(self, region: Region, labels: np.ndarray, contours: np.ndarray) -> None:
        rows, cols = region.rows(), region.cols()
        self.human_mask[rows, cols] = 1
        self.human_labels[rows, cols] = labels
        self.human_contours[rows, cols] = contours
        self.regions.append(region)

    def annotate_fully(self, labels: np.ndarray, contours: np.ndarray) -> None:
        self.human_mask[:] = 1
        self.human_labels[:] = labels
        self.human_contours[:] = contours
