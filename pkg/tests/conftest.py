import numpy as np
import pytest

from bev_adapter.raster import BevSpec
from cot.prompts import CotOptions, template_corpus
from datagen.encoding import SampleEncoder
from datagen.world import gen_world
from model.transformer import ModelConfig, init_model
from tokenizer.vocab import build_vocab

# Planning turn only: keeps streams short enough for fast generation in tests.
PLAN_ONLY = CotOptions(perception=False, prediction=False, decision=False)
SMALL_BEV = BevSpec(extent_m=32.0, resolution_m=2.0)


@pytest.fixture(scope="session")
def vocab():
    return build_vocab(template_corpus())


@pytest.fixture(scope="session")
def world():
    return gen_world(seed=7, n_scenes=12)


@pytest.fixture
def encoder(vocab):
    return SampleEncoder(vocab, bev=SMALL_BEV, grid=(8, 8), adapter="pool", options=PLAN_ONLY)


@pytest.fixture
def full_encoder(vocab):
    return SampleEncoder(vocab, bev=SMALL_BEV, grid=(8, 8), adapter="pool")


def tiny_config(vocab, encoder, **overrides) -> ModelConfig:
    n_visual, dim = encoder.visual_layout
    fields = dict(
        n_layers=1, width=16, n_heads=2, max_seq_len=512,
        vocab_size=len(vocab), visual_token_dim=dim, n_visual_tokens=n_visual, seed=0,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


@pytest.fixture
def tiny_model(vocab, encoder):
    return init_model(tiny_config(vocab, encoder))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
