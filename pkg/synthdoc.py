"""
Synthetic handwritten-like pages with known main/side/background ground truth.
Glyphs are abstract blobs; side text is written smaller than main text.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from skimage.draw import ellipse, rectangle

from errors import ConfigurationError
from imaging import DocumentImage, make_document
from models import SegLabel
from schemas import Rect, SynthConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthPage:
    image: DocumentImage
    labels: np.ndarray  # (h, w) uint8 ground truth


def validate_layout(cfg: SynthConfig, blocks: Sequence[Rect]):
    if cfg.main_glyph_height <= cfg.side_glyph_height:
        raise ConfigurationError("main glyph height must exceed side glyph height")
    if cfg.side_glyph_height < 2:
        raise ConfigurationError("side glyph height must be at least 2px")
    if cfg.ink_range[1] >= cfg.paper_range[0]:
        raise ConfigurationError("ink intensities must be darker than paper intensities")
    for block in blocks:
        if block.x + block.w > cfg.page_width or block.y + block.h > cfg.page_height:
            raise ConfigurationError(f"block {block} lies outside the {cfg.page_width}x{cfg.page_height} page")
    for i, a in enumerate(blocks):
        for b in blocks[i + 1:]:
            if a.overlaps(b):
                raise ConfigurationError(f"blocks {a} and {b} overlap")


def _draw_block(pixels: np.ndarray, labels: np.ndarray, block: Rect, glyph_height: int,
                label: SegLabel, cfg: SynthConfig, rng: np.random.Generator):
    pitch = max(glyph_height + 2, int(round(glyph_height * cfg.line_spacing)))
    gap = max(3, int(round(0.3 * glyph_height)))
    shape = pixels.shape
    top = block.y
    while top + glyph_height <= block.y + block.h:
        x = block.x + int(rng.integers(0, gap + 1))
        while True:
            gh = int(rng.integers(max(2, int(0.85 * glyph_height)), glyph_height + 1))
            gw = max(2, int(round(gh * rng.uniform(0.5, 1.0))))
            if x + gw > block.x + block.w:
                break
            if rng.random() < cfg.glyph_density:
                y = top + (glyph_height - gh)
                ink = rng.uniform(*cfg.ink_range)
                if rng.random() < 0.5:
                    rr, cc = ellipse(y + (gh - 1) / 2, x + (gw - 1) / 2, gh / 2, gw / 2, shape=shape)
                else:
                    rr, cc = rectangle(start=(y, x), extent=(gh, gw), shape=shape)
                pixels[rr, cc] = ink
                labels[rr, cc] = label
            x += gw + gap + int(rng.integers(0, gap + 1))
        top += pitch


def generate_page(cfg: SynthConfig, rng: Optional[np.random.Generator] = None,
                  source_id: str = "synth", main_block: Optional[Rect] = None,
                  margin_blocks: Optional[List[Rect]] = None) -> SynthPage:
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    main_block = main_block or cfg.main_block
    margin_blocks = list(margin_blocks if margin_blocks is not None else cfg.margin_blocks)
    validate_layout(cfg, [main_block] + margin_blocks)

    h, w = cfg.page_height, cfg.page_width
    paper = rng.uniform(*cfg.paper_range)
    pixels = np.full((h, w), paper, dtype=np.float64)
    labels = np.zeros((h, w), dtype=np.uint8)

    _draw_block(pixels, labels, main_block, cfg.main_glyph_height, SegLabel.MAIN_TEXT, cfg, rng)
    for block in margin_blocks:
        _draw_block(pixels, labels, block, cfg.side_glyph_height, SegLabel.SIDE_TEXT, cfg, rng)

    if cfg.noise_level > 0:
        pixels += rng.normal(0.0, cfg.noise_level, size=pixels.shape)
    pixels = np.clip(pixels, 0.0, 1.0)
    return SynthPage(image=make_document(pixels, source_id), labels=labels)


def _jitter(block: Rect, dx: int, dy: int, cfg: SynthConfig) -> Rect:
    x = int(np.clip(block.x + dx, 0, cfg.page_width - block.w))
    y = int(np.clip(block.y + dy, 0, cfg.page_height - block.h))
    return Rect(x=x, y=y, w=block.w, h=block.h)


def _mirror(block: Rect, cfg: SynthConfig) -> Rect:
    return Rect(x=cfg.page_width - block.x - block.w, y=block.y, w=block.w, h=block.h)


def page_layout(cfg: SynthConfig, rng: np.random.Generator):
    """Main and margin blocks for one page: optional horizontal mirror plus positional jitter"""
    mirror = bool(rng.random() < 0.5)
    blocks = [cfg.main_block] + list(cfg.margin_blocks)
    if mirror:
        blocks = [_mirror(b, cfg) for b in blocks]
    j = cfg.geometry_jitter
    jittered = [_jitter(b, int(rng.integers(-j, j + 1)), int(rng.integers(-j, j + 1)), cfg) for b in blocks]
    try:
        validate_layout(cfg, jittered)
        blocks = jittered
    except ConfigurationError:
        pass
    return blocks[0], blocks[1:]


def generate_corpus(cfg: SynthConfig, n_pages: int, rng: Optional[np.random.SeedSequence] = None,
                    prefix: str = "synth") -> List[SynthPage]:
    if n_pages < 1:
        raise ConfigurationError("n_pages must be at least 1")
    validate_layout(cfg, [cfg.main_block] + list(cfg.margin_blocks))
    root = rng if rng is not None else np.random.SeedSequence(cfg.rng_seed)
    pages = []
    for i, child in enumerate(root.spawn(n_pages)):
        page_rng = np.random.default_rng(child)
        main_block, margins = page_layout(cfg, page_rng)
        pages.append(generate_page(cfg, page_rng, source_id=f"{prefix}_{i:03d}",
                                   main_block=main_block, margin_blocks=margins))
    logger.info(f"Generated {n_pages} synthetic pages ({cfg.page_width}x{cfg.page_height})")
    return pages
