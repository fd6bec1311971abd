import os

# keep BLAS single-threaded so numeric results are reproducible run to run
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from singsynth.model import ModelConfig
from singsynth.score import demo_lexicon


@pytest.fixture(scope="session")
def lexicon():
    return demo_lexicon()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    """Smallest config that still exercises every code path."""
    return ModelConfig(
        hidden_dim=8,
        encoder_blocks=1,
        decoder_blocks=1,
        attention_heads=2,
        conv_kernel_size=3,
        conv_filter_dim=16,
        max_note_frames=64,
        dropout=0.1,
    )
