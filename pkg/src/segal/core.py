"""Shared numeric primitives and grid conventions.

Everything downstream (the segmenter, acquisition scoring, calibration)
consumes the array layouts defined here.  Shapes are checked hard: a
mismatch raises instead of broadcasting, because silent broadcasts hide
acquisition bugs.
"""

from __future__ import annotations

import numpy as np

#: Sentinel class id for pixels without a label.
UNLABELED = -1

SIMPLEX_TOL = 1e-6


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


def _as_float_grid(a, name):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def validate_image(image) -> np.ndarray:
    """Check an (H, W, channels) image: finite, within [0, 1]."""
    image = _as_float_grid(image, "image")
    if image.ndim != 3:
        raise InvalidInputError(f"image must be (H, W, channels), got shape {image.shape}")
    if min(image.shape) < 1:
        raise InvalidInputError(f"image dimensions must be >= 1, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidInputError("image values must lie in [0, 1]")
    return image


def validate_label_mask(mask, classes: int) -> np.ndarray:
    """Check an (H, W) label mask: every non-sentinel label < classes."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidInputError(f"label mask must be (H, W), got shape {mask.shape}")
    mask = mask.astype(np.int64, copy=False)
    labeled = mask != UNLABELED
    if labeled.any():
        vals = mask[labeled]
        if vals.min() < 0 or vals.max() >= classes:
            raise InvalidInputError(
                f"labels must be in [0, {classes}) or UNLABELED, got range "
                f"[{vals.min()}, {vals.max()}]"
            )
    return mask


def validate_probability_map(p) -> np.ndarray:
    """Check an (H, W, C) map: per pixel non-negative, sums to 1 within tolerance."""
    p = _as_float_grid(p, "probability map")
    if p.ndim != 3:
        raise InvalidInputError(f"probability map must be (H, W, C), got shape {p.shape}")
    if p.min() < -SIMPLEX_TOL:
        raise InvalidInputError("probability map has negative entries")
    sums = p.sum(axis=2)
    if np.abs(sums - 1.0).max() > SIMPLEX_TOL:
        raise InvalidInputError("probability map rows do not sum to 1")
    return p


def validate_probability_stack(stack) -> np.ndarray:
    """Check a (T, H, W, C) stack of probability maps with identical shapes."""
    stack = _as_float_grid(stack, "probability stack")
    if stack.ndim != 4 or stack.shape[0] < 1:
        raise InvalidInputError(
            f"probability stack must be (T, H, W, C) with T >= 1, got shape {stack.shape}"
        )
    for t in range(stack.shape[0]):
        validate_probability_map(stack[t])
    return stack


def softmax(logits) -> np.ndarray:
    """Numerically stabilized softmax of a length-C logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or not np.all(np.isfinite(logits)):
        raise InvalidInputError("softmax requires a non-empty finite logit vector")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_grid(logits) -> np.ndarray:
    """Per-pixel softmax over the last axis of an (..., C) logit grid."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("softmax requires finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def mc_average(stack) -> np.ndarray:
    """Average a (T, H, W, C) stack of per-pass probability maps.

    The arithmetic mean over passes is the model's predictive
    distribution; the result again satisfies the simplex invariant.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 4 or stack.shape[0] < 1:
        raise InvalidInputError("mc_average needs a non-empty (T, H, W, C) stack")
    return stack.mean(axis=0)


def one_hot(label: int, classes: int) -> np.ndarray:
    """Length-``classes`` indicator vector with a single 1 at ``label``."""
    label = int(label)
    if not 0 <= label < classes:
        raise InvalidInputError(f"label {label} out of range for {classes} classes")
    v = np.zeros(classes, dtype=np.float64)
    v[label] = 1.0
    return v
