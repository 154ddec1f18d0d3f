import dataclasses

import numpy as np
import pytest
import torch

from handobj.config import desk, toy

torch.set_num_threads(1)


def f64(*shape, seed=0, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64) * scale


@pytest.fixture(scope="session")
def toy_config():
    return toy()


@pytest.fixture(scope="session")
def toy64_config():
    return dataclasses.replace(toy(), precision="float64")


@pytest.fixture(scope="session")
def toy_scenes(toy_config):
    from handobj.synth import generate_scenes

    return generate_scenes(0, 4, toy_config)


@pytest.fixture(scope="session")
def desk_scenes():
    from handobj.synth import generate_scenes

    return generate_scenes(0, 3, desk())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
