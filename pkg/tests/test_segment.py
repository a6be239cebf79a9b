import numpy as np
import pytest

from errors import ShapeError
from featmap import FeatureMap, densify, extract_feature_map, window_positions
from imaging import BinaryImage, binarize, make_document
from models import SegLabel, ThresholdMode
from schemas import SegmentationConfig, SlidingConfig
from segment import (
    MainTextMask,
    assign_labels,
    auto_threshold,
    canonicalize_signs,
    fit_pca,
    project,
    segment_feature_map,
    segment_page,
    threshold_main_text,
    to_rgb,
    visualize_pca_rgb,
    window_ink_ratio,
)
from training import extract_branch


class InkExtractor:
    """Mirror-invariant window statistics"""

    def __init__(self, input_size):
        self.input_size = input_size

    def embed_batch(self, crops):
        ink = (crops < 0.5).mean(axis=(1, 2))
        return np.stack([ink, crops.mean(axis=(1, 2)), crops.std(axis=(1, 2)), ink ** 2], axis=1)


def _feature_map(grid, h, w, window, stride):
    return FeatureMap(grid=np.asarray(grid, dtype=np.float32),
                      xs=window_positions(w, window, stride), ys=window_positions(h, window, stride),
                      stride=stride, window=window, target_size=(w, h))


class TestPCA:

    def test_matches_covariance_eigendecomposition(self):
        x = np.random.default_rng(0).normal(size=(50, 8)) @ np.diag([5, 4, 3, 2, 1, 0.5, 0.3, 0.1])
        pca = fit_pca(x, k=3)
        eigvals, eigvecs = np.linalg.eigh(np.cov(x, rowvar=False))
        order = np.argsort(eigvals)[::-1][:3]
        np.testing.assert_allclose(pca.explained_variance, eigvals[order], rtol=1e-5)
        for i, j in enumerate(order):
            assert abs(abs(pca.components[i] @ eigvecs[:, j]) - 1) < 1e-5
        np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(3), atol=1e-10)
        assert np.all(np.diff(pca.explained_variance) <= 0)
        assert not pca.degenerate

    def test_sign_canonicalized_to_equality(self):
        x = np.random.default_rng(1).normal(size=(50, 8)) * np.arange(8, 0, -1)
        pca = fit_pca(x, k=3)
        eigvals, eigvecs = np.linalg.eigh(np.cov(x, rowvar=False))
        reference = eigvecs[:, np.argsort(eigvals)[::-1][:3]].T
        # Orient both by the sign of the largest-magnitude entry
        def orient(rows):
            return rows * np.sign(rows[np.arange(len(rows)), np.abs(rows).argmax(axis=1)])[:, None]
        np.testing.assert_allclose(orient(pca.components), orient(reference), atol=1e-5)

    def test_degenerate_data(self):
        t = np.linspace(0, 1, 30)[:, None]
        x = t @ np.array([[1.0, 2.0, -1.0, 0.5]])
        pca = fit_pca(x, k=3)
        assert pca.degenerate
        assert pca.explained_variance[0] > 0

    def test_fewer_dimensions_than_k(self):
        x = np.random.default_rng(2).normal(size=(20, 2))
        pca = fit_pca(x, k=3)
        assert pca.k == 2
        assert pca.degenerate

    def test_needs_two_vectors(self):
        with pytest.raises(ShapeError):
            fit_pca(np.ones((1, 4)), k=3)

    def test_subsampling_is_seeded(self):
        grid = np.random.default_rng(3).normal(size=(6, 6, 5))
        dense = densify(_feature_map(grid, 60, 60, 10, 10))
        a = fit_pca(dense, k=3, max_samples=500, seed=7)
        b = fit_pca(dense, k=3, max_samples=500, seed=7)
        np.testing.assert_array_equal(a.components, b.components)

    def test_project_dense_equals_per_pixel(self):
        grid = np.random.default_rng(4).normal(size=(4, 5, 6))
        dense = densify(_feature_map(grid, 40, 50, 10, 10))
        pca = fit_pca(dense, k=3)
        maps = project(pca, dense)
        assert maps.shape == (3, 40, 50)
        flat = project(pca, dense.values.reshape(-1, 6))
        np.testing.assert_allclose(maps, np.moveaxis(flat.reshape(40, 50, 3), -1, 0), atol=1e-10)

    def test_project_dimension_mismatch(self):
        pca = fit_pca(np.random.default_rng(5).normal(size=(20, 4)), k=2)
        with pytest.raises(ShapeError):
            project(pca, np.zeros((3, 5)))


class TestSignCanonicalization:

    @pytest.fixture
    def inked(self):
        pixels = np.full((60, 60), 0.9)
        pixels[:, 30:] = np.where(np.random.default_rng(6).random((60, 30)) < 0.3, 0.1, 0.9)
        doc = make_document(pixels, "half")
        fmap = extract_feature_map(InkExtractor(10), doc, SlidingConfig(window=10, stride=5))
        return fmap, binarize(doc)

    def test_low_ink_windows_score_higher(self, inked):
        fmap, bin = inked
        pca = canonicalize_signs(fit_pca(densify(fmap), k=3), fmap, bin)
        ratio = window_ink_ratio(fmap, bin).ravel()
        scores = project(pca, fmap.grid.reshape(-1, fmap.channels))
        low = ratio < 0.01
        for i in range(pca.k):
            assert scores[low, i].mean() >= scores[~low, i].mean()
        assert not pca.sign_warning

    def test_result_independent_of_initial_signs(self, inked):
        fmap, bin = inked
        pca = fit_pca(densify(fmap), k=3)
        flipped = pca.flip(0).flip(2)
        a = canonicalize_signs(pca, densify(fmap), bin)
        b = canonicalize_signs(flipped, densify(fmap), bin)
        np.testing.assert_allclose(a.components, b.components)

    def test_warning_without_blank_windows(self):
        pixels = np.where(np.random.default_rng(7).random((40, 40)) < 0.4, 0.1, 0.9)
        doc = make_document(pixels, "dense")
        fmap = extract_feature_map(InkExtractor(10), doc, SlidingConfig(window=10, stride=5))
        pca = canonicalize_signs(fit_pca(densify(fmap), k=3), fmap, binarize(doc))
        assert pca.sign_warning

    def test_window_ink_ratio(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[:10, :10] = True
        fmap = _feature_map(np.zeros((3, 3, 1)), 20, 20, 10, 5)
        ratio = window_ink_ratio(fmap, BinaryImage(mask))
        assert ratio[0, 0] == 1.0
        assert ratio[1, 1] == 0.25
        assert ratio[2, 2] == 0.0


class TestThresholds:

    def test_constant_component_is_unconstrained(self):
        assert auto_threshold(np.full((5, 5), 3.0)) == np.inf

    def test_otsu_separates_modes(self):
        values = np.concatenate([np.full(100, -2.0), np.full(100, 3.0)])
        t = auto_threshold(values)
        assert -2.0 <= t < 3.0

    def test_fixed_thresholds(self):
        pc1 = np.array([[0.0, 1.0], [2.0, 3.0]])
        pc2 = np.array([[1.0, 0.0], [0.0, 1.0]])
        cfg = SegmentationConfig(threshold_mode=ThresholdMode.FIXED, T1=2.5, T2=0.5)
        np.testing.assert_array_equal(threshold_main_text(pc1, pc2, cfg).mask, [[False, True], [True, False]])

    def test_fixed_mode_requires_values(self):
        with pytest.raises(ValueError):
            SegmentationConfig(threshold_mode=ThresholdMode.FIXED, T1=1.0)

    def test_mask_grows_with_thresholds(self):
        rng = np.random.default_rng(8)
        pc1, pc2 = rng.normal(size=(30, 30)), rng.normal(size=(30, 30))
        previous = None
        for t in np.linspace(-2, 2, 9):
            cfg = SegmentationConfig(threshold_mode=ThresholdMode.FIXED, T1=t, T2=0.3)
            mask = threshold_main_text(pc1, pc2, cfg).mask
            if previous is not None:
                assert np.all(mask[previous])
            previous = mask

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            threshold_main_text(np.zeros((2, 2)), np.zeros((2, 3)), SegmentationConfig())


class TestLabels:

    def test_assign_labels(self):
        bin = BinaryImage(np.array([[True, True], [False, False]]))
        mask = MainTextMask(np.array([[True, False], [True, False]]))
        labels = assign_labels(mask, bin).labels
        np.testing.assert_array_equal(labels, [[SegLabel.MAIN_TEXT, SegLabel.SIDE_TEXT], [0, 0]])

    def test_assign_labels_shape_mismatch(self):
        with pytest.raises(ShapeError):
            assign_labels(MainTextMask(np.zeros((2, 2), dtype=bool)), BinaryImage(np.zeros((3, 2), dtype=bool)))

    def test_rgb_normalization(self):
        comps = np.stack([np.array([[0.0, 1.0]]), np.array([[5.0, 5.0]]), np.array([[-1.0, 3.0]])])
        rgb = to_rgb(comps)
        assert rgb.dtype == np.uint8
        np.testing.assert_array_equal(rgb[0, 0], [0, 128, 0])
        np.testing.assert_array_equal(rgb[0, 1], [255, 128, 255])

    def test_rgb_needs_three_components(self):
        grid = np.random.default_rng(9).normal(size=(3, 3, 2))
        dense = densify(_feature_map(grid, 30, 30, 10, 10))
        with pytest.raises(ShapeError):
            visualize_pca_rgb(fit_pca(dense, k=3), dense)


class TestSegmentation:

    def test_result_structure(self, synth_page):
        fmap = extract_feature_map(InkExtractor(40), synth_page.image, SlidingConfig(window=40, stride=20))
        result = segment_feature_map(fmap, synth_page.image, SegmentationConfig(max_fit_samples=20000))
        h, w = synth_page.labels.shape
        assert result.components.shape == (3, h, w)
        assert result.rgb.shape == (h, w, 3)
        labels = result.segmentation.labels
        assert set(np.unique(labels)) <= {0, 1, 2}
        np.testing.assert_array_equal(labels != SegLabel.BACKGROUND, result.binary.mask)

    def test_single_feature_channel(self, synth_page):
        fmap = extract_feature_map(InkExtractor(40), synth_page.image, SlidingConfig(window=40, stride=20))
        one = FeatureMap(grid=fmap.grid[..., :1], xs=fmap.xs, ys=fmap.ys, stride=fmap.stride,
                         window=fmap.window, target_size=fmap.target_size)
        result = segment_feature_map(one, synth_page.image)
        assert result.pca.k == 1
        assert result.thresholds[1] == np.inf

    def test_deterministic(self, synth_page):
        cfg = SegmentationConfig(max_fit_samples=5000, rng_seed=3)
        fmap = extract_feature_map(InkExtractor(40), synth_page.image, SlidingConfig(window=40, stride=20))
        a = segment_feature_map(fmap, synth_page.image, cfg)
        b = segment_feature_map(fmap, synth_page.image, cfg)
        np.testing.assert_array_equal(a.segmentation.labels, b.segmentation.labels)

    def test_mirrored_page_gives_mirrored_segmentation(self, synth_page):
        cfg = SegmentationConfig(max_fit_samples=10 ** 6)
        sliding = SlidingConfig(window=40, stride=20)
        page = synth_page.image
        mirrored = make_document(page.pixels[:, ::-1].copy(), "mirrored")
        a = segment_page(InkExtractor(40), page, sliding, cfg)
        b = segment_page(InkExtractor(40), mirrored, sliding, cfg)
        disagreement = np.mean(a.segmentation.labels != b.segmentation.labels[:, ::-1])
        assert disagreement < 0.01

    def test_negated_features_give_the_same_mask(self, synth_page):
        cfg = SegmentationConfig(max_fit_samples=10 ** 6)
        fmap = extract_feature_map(InkExtractor(40), synth_page.image, SlidingConfig(window=40, stride=20))
        negated = FeatureMap(grid=-fmap.grid, xs=fmap.xs, ys=fmap.ys, stride=fmap.stride,
                             window=fmap.window, target_size=fmap.target_size)
        a = segment_feature_map(fmap, synth_page.image, cfg)
        b = segment_feature_map(negated, synth_page.image, cfg)
        assert np.mean(a.mask.mask != b.mask.mask) < 0.001

    def test_thresholds_computed_once(self, synth_page, monkeypatch):
        import segment

        calls = []
        original = segment.auto_threshold

        def counting(values):
            calls.append(values.shape)
            return original(values)

        monkeypatch.setattr(segment, "auto_threshold", counting)
        fmap = extract_feature_map(InkExtractor(40), synth_page.image, SlidingConfig(window=40, stride=20))
        result = segment_feature_map(fmap, synth_page.image, SegmentationConfig(max_fit_samples=20000))
        assert len(calls) == 2
        assert result.thresholds == result.mask.thresholds

    def test_with_trained_branch(self, mini_model):
        pixels = np.full((40, 40), 0.9)
        pixels[5:8, 5:30] = 0.1
        pixels[20:30, 20:22] = 0.1
        doc = make_document(pixels, "tiny")
        result = segment_page(extract_branch(mini_model), doc, SlidingConfig(window=8, stride=4))
        assert result.segmentation.labels.shape == (40, 40)
        assert not result.segmentation.labels[~result.binary.mask].any()
