import json

import numpy as np
import pytest

from oracles import reference_contour
from segal.core import InvalidInputError
from segal.data import (
    DatasetError,
    SyntheticConfig,
    downsample_bilinear,
    extract_contours,
    generate_synthetic,
    load_dataset,
    save_dataset,
)


class TestExtractContours:
    def test_empty_mask(self):
        np.testing.assert_array_equal(extract_contours(np.zeros((8, 8), int)), 0)

    def test_all_foreground_mask(self):
        # replicate padding: a constant field has zero gradient everywhere
        np.testing.assert_array_equal(extract_contours(np.ones((8, 8), int)), 0)

    def test_straight_edge_band_width(self):
        # vertical step edge: 2-px Sobel response dilated by radius 3 -> 8-px band
        mask = np.zeros((16, 16), int)
        mask[:, 8:] = 1
        contour = extract_contours(mask)
        row = contour[8]
        assert row.sum() == 8
        np.testing.assert_array_equal(np.nonzero(row)[0], np.arange(4, 12))

    def test_matches_reference_morphology(self):
        rng = np.random.default_rng(0)
        for _ in range(3):
            mask = np.zeros((12, 12), dtype=np.int64)
            for _ in range(2):
                r, c = rng.integers(2, 9, 2)
                mask[r : r + 3, c : c + 3] = 1
            np.testing.assert_array_equal(extract_contours(mask), reference_contour(mask))

    def test_superset_of_sobel_positive(self):
        from scipy import ndimage

        rng = np.random.default_rng(1)
        mask = (rng.random((10, 10)) < 0.3).astype(np.int64)
        contour = extract_contours(mask)
        gx = ndimage.sobel(mask.astype(float), axis=0, mode="nearest")
        gy = ndimage.sobel(mask.astype(float), axis=1, mode="nearest")
        raw = np.hypot(gx, gy) > 0
        assert (contour[raw] == 1).all()

    def test_non_binary_rejected(self):
        with pytest.raises(InvalidInputError):
            extract_contours(np.full((4, 4), 2))


class TestDownsampleBilinear:
    def test_identity_at_source_size(self):
        rng = np.random.default_rng(2)
        img = rng.random((6, 9, 1))
        np.testing.assert_allclose(downsample_bilinear(img, 6, 9), img, atol=1e-15)

    def test_constant_stays_constant(self):
        img = np.full((8, 12, 1), 0.37)
        out = downsample_bilinear(img, 3, 5)
        np.testing.assert_allclose(out, 0.37, atol=1e-15)

    def test_checkerboard_average(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]
        out = downsample_bilinear(img, 1, 1)
        assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_stays_within_source_range(self):
        rng = np.random.default_rng(3)
        img = rng.random((16, 16, 1))
        out = downsample_bilinear(img, 5, 7)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12


class TestGenerateSynthetic:
    def test_deterministic(self):
        cfg = SyntheticConfig(train_images=3, test_images=2, seed=9)
        a = generate_synthetic(cfg)
        b = generate_synthetic(cfg)
        assert [r.id for r in a] == [r.id for r in b]
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.image, rb.image)
            np.testing.assert_array_equal(ra.mask, rb.mask)

    def test_masks_are_binary(self):
        for rec in generate_synthetic(SyntheticConfig(train_images=4, test_images=1, seed=1)):
            assert set(np.unique(rec.mask)) <= {0, 1}
            assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0

    def test_foreground_fraction_near_expectation(self):
        cfg = SyntheticConfig(train_images=100, test_images=0, seed=2)
        records = generate_synthetic(cfg)
        observed = np.mean([rec.mask.mean() for rec in records])
        expected = cfg.expected_foreground_fraction()
        assert abs(observed - expected) / expected < 0.20

    def test_split_labels(self):
        records = generate_synthetic(SyntheticConfig(train_images=2, test_images=3, seed=3))
        assert sum(r.split == "train" for r in records) == 2
        assert sum(r.split == "test" for r in records) == 3


class TestManifestRoundTrip:
    def test_bit_identical_round_trip(self, tmp_path):
        records = generate_synthetic(SyntheticConfig(train_images=3, test_images=1, seed=4))
        manifest = save_dataset(records, classes=2, out_dir=tmp_path)
        loaded, classes = load_dataset(manifest)
        assert classes == 2
        assert [r.id for r in loaded] == [r.id for r in records]
        for orig, back in zip(records, loaded):
            np.testing.assert_array_equal(orig.image, back.image)
            np.testing.assert_array_equal(orig.mask, back.mask)
            assert orig.split == back.split

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"classes": 2, "records": []}))
        records, classes = load_dataset(path)
        assert records == [] and classes == 2

    def test_missing_mask_names_record(self, tmp_path):
        records = generate_synthetic(SyntheticConfig(train_images=1, test_images=0, seed=5))
        manifest = save_dataset(records, classes=2, out_dir=tmp_path)
        (tmp_path / "masks" / "train_000.png").unlink()
        with pytest.raises(DatasetError, match="train_000"):
            load_dataset(manifest)

    def test_label_out_of_range_names_record(self, tmp_path):
        records = generate_synthetic(SyntheticConfig(train_images=1, test_images=0, seed=6))
        manifest = save_dataset(records, classes=2, out_dir=tmp_path)
        from PIL import Image as PILImage

        bad = np.full((records[0].mask.shape), 7, dtype=np.uint8)
        PILImage.fromarray(bad).save(tmp_path / "masks" / "train_000.png")
        with pytest.raises(DatasetError, match="train_000"):
            load_dataset(manifest)

    def test_shape_mismatch_names_record(self, tmp_path):
        records = generate_synthetic(SyntheticConfig(train_images=1, test_images=0, seed=7))
        manifest = save_dataset(records, classes=2, out_dir=tmp_path)
        from PIL import Image as PILImage

        PILImage.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(
            tmp_path / "masks" / "train_000.png"
        )
        with pytest.raises(DatasetError, match="train_000"):
            load_dataset(manifest)
