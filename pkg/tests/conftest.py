import numpy as np
import pytest

from pcrep.model import ModelConfig, init_encoder
from pcrep.objectives import ObjectiveConfig
from pcrep.synthdata import SynthConfig, generate_corpus


@pytest.fixture
def tiny_encoder():
    cfg = ModelConfig(layers=2, hidden=6, dim=4)
    return cfg, init_encoder(cfg, seed=3)


@pytest.fixture
def tiny_objective():
    return ObjectiveConfig(n=2, s=4, l=3, p_anchor=0.25, lam=0.1)


@pytest.fixture
def small_corpus():
    # 4 classes in 6 dims keeps one-hot corners valid
    return generate_corpus(SynthConfig(classes=4, dim=6, min_len=30, max_len=50, seed=17), 10)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
