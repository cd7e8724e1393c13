import numpy as np
import pytest
import torch

from facehue.checkpoint import (
    build_color_encoder,
    build_colorizer,
    build_discriminator,
)
from facehue.config import desk_config
from facehue.data import make_synthetic_dataset, synthetic_face


@pytest.fixture(scope="session")
def cfg():
    return desk_config(seed=0)


@pytest.fixture(scope="session")
def synthetic_sample():
    return synthetic_face(7, 64)


@pytest.fixture(scope="session")
def synthetic_set():
    return make_synthetic_dataset(8, 64, seed=3)


@pytest.fixture()
def models(cfg):
    torch.manual_seed(0)
    return {
        "encoder": build_color_encoder(cfg),
        "colorizer": build_colorizer(cfg),
        "discriminator": build_discriminator(cfg),
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
