import numpy as np
import pytest
from PIL import Image
from skimage.measure import label

from errors import BoundsError, ConfigurationError, ImageFormatError
from imaging import (
    BinaryImage,
    binarize,
    component_stats,
    connected_components,
    crop_patch,
    estimate_patch_size,
    load_image,
    load_labels,
    make_document,
    otsu_level,
)
from models import BinarizationMethod
from schemas import ImagingConfig, PatchGeometry


def _between_class_variance(levels: np.ndarray, t: int) -> float:
    dark = levels <= t
    w0, w1 = dark.mean(), 1 - dark.mean()
    if w0 == 0 or w1 == 0:
        return 0.0
    mu0, mu1 = levels[dark].mean(), levels[~dark].mean()
    return w0 * w1 * (mu0 - mu1) ** 2


class TestLoadImage:

    def test_grayscale_scaled_to_unit_range(self, tmp_path):
        arr = np.array([[0, 51], [204, 255]], dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "g.png")
        doc = load_image(tmp_path / "g.png")
        assert doc.source_id == "g"
        np.testing.assert_allclose(doc.pixels, arr / 255.0)

    def test_rgb_uses_luminance_weights(self, tmp_path):
        arr = np.zeros((2, 3, 3), dtype=np.uint8)
        arr[:, 0, 0] = 255
        arr[:, 1, 1] = 255
        arr[:, 2, 2] = 255
        Image.fromarray(arr).save(tmp_path / "rgb.png")
        doc = load_image(tmp_path / "rgb.png")
        np.testing.assert_allclose(doc.pixels[0], [0.299, 0.587, 0.114], atol=1e-12)

    def test_sixteen_bit(self, tmp_path):
        arr = np.array([[0, 65535], [32768, 65535]], dtype=np.uint16)
        Image.fromarray(arr).save(tmp_path / "deep.png")
        doc = load_image(tmp_path / "deep.png")
        np.testing.assert_allclose(doc.pixels, arr / 65535.0)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"not an image at all")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_make_document_rejects_out_of_range(self):
        with pytest.raises(ImageFormatError):
            make_document(np.array([[0.0, 1.5]]), "bad")
        with pytest.raises(ImageFormatError):
            make_document(np.zeros((0, 4)), "empty")


class TestLoadLabels:

    def test_values_above_two_rejected(self, tmp_path):
        Image.fromarray(np.array([[0, 3]], dtype=np.uint8)).save(tmp_path / "l.png")
        with pytest.raises(ImageFormatError):
            load_labels(tmp_path / "l.png")

    def test_reads_label_values(self, tmp_path):
        arr = np.array([[0, 1], [2, 1]], dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "l.png")
        np.testing.assert_array_equal(load_labels(tmp_path / "l.png"), arr)


class TestBinarize:

    def test_two_level_image(self):
        pixels = np.full((20, 20), 0.9)
        pixels[5:10, 5:15] = 0.1
        mask = binarize(make_document(pixels, "t")).mask
        expected = np.zeros((20, 20), dtype=bool)
        expected[5:10, 5:15] = True
        np.testing.assert_array_equal(mask, expected)

    def test_constant_image_has_no_foreground(self):
        for value in (0.0, 0.5, 1.0):
            doc = make_document(np.full((10, 10), value), "c")
            assert otsu_level(doc) is None
            assert not binarize(doc).mask.any()

    def test_otsu_maximizes_between_class_variance(self):
        rng = np.random.default_rng(3)
        pixels = np.clip(np.concatenate([
            rng.normal(0.2, 0.05, 3000), rng.normal(0.8, 0.08, 7000)
        ]), 0, 1).reshape(100, 100)
        doc = make_document(pixels, "bimodal")
        levels = np.rint(pixels * 255).astype(np.int64)

        chosen = otsu_level(doc)
        variances = [_between_class_variance(levels, t) for t in range(levels.min(), levels.max())]
        best = max(variances)
        assert _between_class_variance(levels, chosen) == pytest.approx(best, rel=1e-9)
        np.testing.assert_array_equal(binarize(doc).mask, levels <= chosen)

    def test_sauvola_finds_dark_strokes(self):
        pixels = np.full((40, 40), 0.85)
        pixels[18:22, 5:35] = 0.15
        cfg = ImagingConfig(method=BinarizationMethod.SAUVOLA, sauvola_window=15)
        mask = binarize(make_document(pixels, "s"), cfg).mask
        assert mask[18:22, 5:35].all()
        assert not mask[:10].any()


class TestConnectedComponents:

    def test_eight_connectivity_and_min_area(self):
        mask = np.zeros((12, 12), dtype=bool)
        mask[1:4, 1:4] = True        # 3x3 block
        mask[4, 4] = True            # diagonal neighbour joins the block
        mask[8:10, 8:11] = True      # 2x3 block
        mask[0, 11] = True           # isolated pixel, dropped
        comps = connected_components(BinaryImage(mask), min_area=4)
        assert sorted(c.area for c in comps) == [6, 10]
        big = max(comps, key=lambda c: c.area)
        assert big.bbox == (1, 1, 4, 4)
        small = min(comps, key=lambda c: c.area)
        assert (small.width, small.height) == (3, 2)

    def test_min_area_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            connected_components(BinaryImage(np.zeros((3, 3), dtype=bool)), min_area=0)

    def test_stats_match_brute_force(self, synth_page):
        bin = binarize(synth_page.image)
        rng = np.random.default_rng(1)
        for _ in range(50):
            size = 40
            x = int(rng.integers(0, synth_page.image.width - size + 1))
            y = int(rng.integers(0, synth_page.image.height - size + 1))
            stats = component_stats(bin, PatchGeometry(x=x, y=y, size=size), min_area=4)

            crop = bin.mask[y:y + size, x:x + size]
            lab = label(crop, connectivity=2)
            heights, widths = [], []
            for i in range(1, lab.max() + 1):
                ys, xs = np.nonzero(lab == i)
                if len(ys) < 4:
                    continue
                heights.append(ys.max() - ys.min() + 1)
                widths.append(xs.max() - xs.min() + 1)

            assert stats.foreground_count == int(crop.sum())
            assert stats.component_count == len(heights)
            if heights:
                assert stats.avg_height == pytest.approx(np.mean(heights), abs=1e-12)
                assert stats.avg_width == pytest.approx(np.mean(widths), abs=1e-12)

    def test_out_of_bounds_region(self, synth_page):
        bin = binarize(synth_page.image)
        with pytest.raises(BoundsError):
            component_stats(bin, PatchGeometry(x=300, y=0, size=40))


class TestPatches:

    def test_crop(self):
        pixels = np.arange(100, dtype=np.float64).reshape(10, 10) / 100
        patch = crop_patch(make_document(pixels, "p"), PatchGeometry(x=2, y=3, size=4))
        np.testing.assert_array_equal(patch.pixels, pixels[3:7, 2:6])
        assert patch.source_id == "p"

    def test_crop_out_of_bounds(self):
        doc = make_document(np.zeros((10, 10)), "p")
        with pytest.raises(BoundsError):
            crop_patch(doc, PatchGeometry(x=7, y=0, size=4))

    def test_estimate_patch_size(self):
        pixels = np.full((60, 60), 0.9)
        pixels[5:15, 5:10] = 0.1
        pixels[30:40, 30:38] = 0.1
        assert estimate_patch_size([make_document(pixels, "e")]) == 40

    def test_estimate_patch_size_without_ink(self, blank_doc):
        with pytest.raises(ConfigurationError):
            estimate_patch_size([blank_doc])
