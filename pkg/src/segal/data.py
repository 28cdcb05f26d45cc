"""Dataset ingestion, contour-label derivation, and a synthetic dataset.

Real datasets arrive as a JSON manifest pointing at PNG images and
single-channel PNG class-id masks.  The synthetic generator produces a
desk-scale stand-in: textured backgrounds with elliptical foreground
objects, a deliberate fraction of which are low-contrast so that early
models stay uncertain about them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from segal.core import InvalidInputError


class DatasetError(Exception):
    """A manifest record could not be loaded; the message names the record."""


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray  # (H, W, C) float64 in [0, 1]
    mask: np.ndarray   # (H, W) int class ids
    split: str         # "train" or "test"


def _disk(radius: int) -> np.ndarray:
    """Euclidean disk structuring element: center distance <= radius."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy**2 + xx**2 <= r**2


def extract_contours(mask) -> np.ndarray:
    """Binary contour labels: Sobel edge pixels dilated by a radius-3 disk.

    The Sobel response is taken on the {0,1} mask with replicate padding
    and thresholded at > 0, so a step edge responds on both sides of the
    boundary.  A constant mask has no contour at all; the dilated output
    always contains every Sobel-positive pixel.
    """
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise InvalidInputError("extract_contours expects a binary mask")
    m = mask.astype(np.float64)
    gx = ndimage.sobel(m, axis=0, mode="nearest")
    gy = ndimage.sobel(m, axis=1, mode="nearest")
    edge = np.hypot(gx, gy) > 0.0
    return ndimage.binary_dilation(edge, structure=_disk(3)).astype(np.int64)


def downsample_bilinear(image, target_height: int, target_width: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling and edge clamping."""
    if target_height < 1 or target_width < 1:
        raise InvalidInputError("target size must be >= 1")
    src = np.asarray(image, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    h, w, _ = src.shape
    ys = (np.arange(target_height) + 0.5) * h / target_height - 0.5
    xs = (np.arange(target_width) + 0.5) * w / target_width - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f)[:, None, None]
    fx = (xs - x0f)[None, :, None]
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    out = (
        src[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + src[np.ix_(y0, x1)] * (1 - fy) * fx
        + src[np.ix_(y1, x0)] * fy * (1 - fx)
        + src[np.ix_(y1, x1)] * fy * fx
    )
    return out[:, :, 0] if squeeze else out


@dataclass(frozen=True)
class SyntheticConfig:
    train_images: int = 40
    test_images: int = 20
    height: int = 64
    width: int = 96
    min_objects: int = 1
    max_objects: int = 4
    min_axis: int = 6
    max_axis: int = 13
    background_low: float = 0.22
    background_high: float = 0.48
    contrast_low: float = 0.22
    contrast_high: float = 0.34
    faint_contrast_low: float = 0.10
    faint_contrast_high: float = 0.15
    faint_fraction: float = 0.30
    dark_contrast_low: float = 0.25
    dark_contrast_high: float = 0.35
    dark_fraction: float = 0.0
    noise: float = 0.05
    texture: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidInputError("image size must be >= 1")
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise InvalidInputError("objects-per-image range is empty")
        if self.min_axis < 2 or self.max_axis < self.min_axis:
            raise InvalidInputError("ellipse axis range is empty")

    def expected_foreground_fraction(self) -> float:
        """First-order expectation of the per-image foreground area fraction."""
        mean_objects = 0.5 * (self.min_objects + self.max_objects)
        mean_axis = 0.5 * (self.min_axis + self.max_axis)
        return mean_objects * np.pi * mean_axis**2 / (self.height * self.width)


def _ellipse_mask(height, width, cy, cx, ay, ax, angle) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    dy = yy - cy
    dx = xx - cx
    u = (dy * np.cos(angle) + dx * np.sin(angle)) / ay
    v = (-dy * np.sin(angle) + dx * np.cos(angle)) / ax
    return u**2 + v**2 <= 1.0


def generate_synthetic(cfg: SyntheticConfig) -> list[SampleRecord]:
    """Deterministic synthetic dataset of ellipse "glands" on noisy texture.

    Objects come in three appearance modes: plainly bright, faintly bright
    (barely above background), and dark (below background).  The faint and
    dark modes are rare, so small training samples usually lack them and a
    model's coverage of them grows with the amount of annotation it sees.
    Pixel values are quantized to the 8-bit grid so PNG round trips are
    exact.
    """
    rng = np.random.default_rng(cfg.seed)
    records = []
    counts = [("train", cfg.train_images), ("test", cfg.test_images)]
    for split, count in counts:
        for i in range(count):
            base = rng.uniform(cfg.background_low, cfg.background_high)
            texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (cfg.height, cfg.width)), 6.0)
            scale = np.abs(texture).max()
            texture = cfg.texture * texture / scale if scale > 0 else texture
            image = base + texture
            mask = np.zeros((cfg.height, cfg.width), dtype=np.int64)
            n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
            for _ in range(n_objects):
                ay = rng.uniform(cfg.min_axis, cfg.max_axis)
                ax = rng.uniform(cfg.min_axis, cfg.max_axis)
                margin = max(ay, ax)
                cy = rng.uniform(margin, cfg.height - margin)
                cx = rng.uniform(margin, cfg.width - margin)
                angle = rng.uniform(0.0, np.pi)
                mode = rng.random()
                if mode < cfg.faint_fraction:
                    contrast = rng.uniform(cfg.faint_contrast_low, cfg.faint_contrast_high)
                elif mode < cfg.faint_fraction + cfg.dark_fraction:
                    contrast = -rng.uniform(cfg.dark_contrast_low, cfg.dark_contrast_high)
                else:
                    contrast = rng.uniform(cfg.contrast_low, cfg.contrast_high)
                blob = _ellipse_mask(cfg.height, cfg.width, cy, cx, ay, ax, angle)
                image = np.where(blob, base + contrast + texture, image)
                mask[blob] = 1
            image = image + rng.normal(0.0, cfg.noise, image.shape)
            image = np.clip(image, 0.0, 1.0)
            image = np.round(image * 255.0) / 255.0
            records.append(
                SampleRecord(
                    id=f"{split}_{i:03d}",
                    image=image[:, :, None],
                    mask=mask,
                    split=split,
                )
            )
    return records


def save_dataset(records: list[SampleRecord], classes: int, out_dir) -> Path:
    """Write PNG images/masks plus the JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    manifest = {"classes": classes, "records": []}
    for rec in records:
        image_rel = f"images/{rec.id}.png"
        mask_rel = f"masks/{rec.id}.png"
        arr = np.round(rec.image * 255.0).astype(np.uint8)
        arr = arr[:, :, 0] if arr.shape[2] == 1 else arr
        PILImage.fromarray(arr).save(out_dir / image_rel)
        PILImage.fromarray(rec.mask.astype(np.uint8)).save(out_dir / mask_rel)
        manifest["records"].append(
            {"id": rec.id, "image": image_rel, "mask": mask_rel, "split": rec.split}
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def load_dataset(manifest_path) -> tuple[list[SampleRecord], int]:
    """Load every manifest record; errors name the offending record id."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if "classes" not in manifest or "records" not in manifest:
        raise DatasetError("manifest needs 'classes' and 'records' fields")
    classes = int(manifest["classes"])
    base = manifest_path.parent
    records = []
    seen = set()
    for entry in manifest["records"]:
        rec_id = entry.get("id", "<missing id>")
        if rec_id in seen:
            raise DatasetError(f"record {rec_id}: duplicate id")
        seen.add(rec_id)
        try:
            image = _load_image(base / entry["image"])
            mask = np.asarray(PILImage.open(base / entry["mask"]), dtype=np.int64)
        except (OSError, KeyError) as exc:
            raise DatasetError(f"record {rec_id}: {exc}") from exc
        if mask.ndim != 2:
            raise DatasetError(f"record {rec_id}: mask must be single-channel")
        if image.shape[:2] != mask.shape:
            raise DatasetError(
                f"record {rec_id}: image {image.shape[:2]} and mask {mask.shape} differ"
            )
        if mask.min() < 0 or mask.max() >= classes:
            raise DatasetError(
                f"record {rec_id}: mask labels outside [0, {classes})"
            )
        records.append(SampleRecord(rec_id, image, mask, entry.get("split", "train")))
    return records, classes


def _load_image(path) -> np.ndarray:
    img = PILImage.open(path)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr
