import numpy as np
import pytest

from errors import ConfigurationError
from imaging import BinaryImage, binarize, connected_components
from models import SegLabel
from schemas import Rect
from synthdoc import generate_corpus, generate_page, validate_layout


class TestPage:

    def test_labels_cover_ink(self, synth_page):
        labels = synth_page.labels
        pixels = synth_page.image.pixels
        assert set(np.unique(labels)) == {0, 1, 2}
        assert np.all(pixels[labels != SegLabel.BACKGROUND] < 0.5)
        assert np.all(pixels[labels == SegLabel.BACKGROUND] > 0.5)

    def test_binarization_recovers_ground_truth(self, synth_page):
        mask = binarize(synth_page.image).mask
        np.testing.assert_array_equal(mask, synth_page.labels != SegLabel.BACKGROUND)

    def test_text_stays_inside_its_block(self, synth_cfg, synth_page):
        main = synth_cfg.main_block
        side = synth_cfg.margin_blocks[0]
        ys, xs = np.nonzero(synth_page.labels == SegLabel.MAIN_TEXT)
        assert xs.min() >= main.x and xs.max() < main.x + main.w
        assert ys.min() >= main.y and ys.max() < main.y + main.h
        ys, xs = np.nonzero(synth_page.labels == SegLabel.SIDE_TEXT)
        assert xs.min() >= side.x and xs.max() < side.x + side.w

    def test_side_glyphs_are_smaller(self, synth_cfg, synth_page):
        def mean_height(cls):
            comps = connected_components(BinaryImage(synth_page.labels == cls), min_area=1)
            return np.mean([c.height for c in comps])

        assert mean_height(SegLabel.SIDE_TEXT) <= synth_cfg.side_glyph_height
        assert mean_height(SegLabel.MAIN_TEXT) > 2 * synth_cfg.side_glyph_height

    def test_seeded(self, synth_cfg):
        a = generate_page(synth_cfg, np.random.default_rng(4))
        b = generate_page(synth_cfg, np.random.default_rng(4))
        np.testing.assert_array_equal(a.image.pixels, b.image.pixels)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_noise_keeps_unit_range(self, synth_cfg):
        noisy = synth_cfg.model_copy(update={"noise_level": 0.2})
        page = generate_page(noisy, np.random.default_rng(0))
        assert page.image.pixels.min() >= 0.0 and page.image.pixels.max() <= 1.0


class TestLayout:

    def test_main_must_be_larger(self, synth_cfg):
        bad = synth_cfg.model_copy(update={"side_glyph_height": synth_cfg.main_glyph_height})
        with pytest.raises(ConfigurationError):
            generate_page(bad)

    def test_ink_darker_than_paper(self, synth_cfg):
        bad = synth_cfg.model_copy(update={"ink_range": (0.5, 0.9), "paper_range": (0.6, 0.9)})
        with pytest.raises(ConfigurationError):
            generate_page(bad)

    def test_blocks_must_not_overlap(self, synth_cfg):
        with pytest.raises(ConfigurationError):
            validate_layout(synth_cfg, [synth_cfg.main_block, Rect(x=150, y=50, w=50, h=50)])

    def test_blocks_inside_page(self, synth_cfg):
        with pytest.raises(ConfigurationError):
            validate_layout(synth_cfg, [Rect(x=300, y=0, w=100, h=100)])


class TestCorpus:

    def test_ids_and_count(self, synth_cfg):
        pages = generate_corpus(synth_cfg, 4, np.random.SeedSequence(1))
        assert [p.image.source_id for p in pages] == ["synth_000", "synth_001", "synth_002", "synth_003"]

    def test_reproducible(self, synth_cfg):
        a = generate_corpus(synth_cfg, 2, np.random.SeedSequence(2))
        b = generate_corpus(synth_cfg, 2, np.random.SeedSequence(2))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image.pixels, y.image.pixels)

    def test_pages_differ(self, synth_cfg):
        a, b = generate_corpus(synth_cfg, 2, np.random.SeedSequence(3))
        assert not np.array_equal(a.labels, b.labels)

    def test_needs_a_page(self, synth_cfg):
        with pytest.raises(ConfigurationError):
            generate_corpus(synth_cfg, 0)
