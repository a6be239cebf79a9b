import numpy as np
import pytest
import torch

from imaging import make_document
from models import BranchArchitecture, SiameseModel
from schemas import Rect, SamplerConfig, SynthConfig
from synthdoc import generate_corpus, generate_page


@pytest.fixture
def synth_cfg():
    """Small page: one main block on the right, one margin block on the left"""
    return SynthConfig(
        page_width=320,
        page_height=320,
        main_block=Rect(x=120, y=20, w=180, h=280),
        margin_blocks=[Rect(x=10, y=60, w=90, h=200)],
        main_glyph_height=16,
        side_glyph_height=6,
        noise_level=0.0,
        geometry_jitter=0,
        rng_seed=0,
    )


@pytest.fixture
def synth_page(synth_cfg):
    return generate_page(synth_cfg, np.random.default_rng(0), source_id="page_a")


@pytest.fixture
def synth_docs(synth_cfg):
    return [p.image for p in generate_corpus(synth_cfg, 3, np.random.SeedSequence(0))]


@pytest.fixture
def sampler_cfg():
    return SamplerConfig(patch_size=40, max_rejections=5000, rng_seed=0)


@pytest.fixture
def blank_doc():
    return make_document(np.full((120, 120), 0.9), "blank")


@pytest.fixture
def mini_arch():
    return BranchArchitecture.miniature(input_size=8)


@pytest.fixture
def mini_model(mini_arch):
    torch.manual_seed(0)
    return SiameseModel(mini_arch)
