import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from came.data import RelationInstance, generate_synthetic
from came.model import CameConfig, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset():
    return generate_synthetic(
        m=8, s=1.0, total=400, d_x=10, d_c=6, noise_sigma=0.3, seed=7,
        pairs_per_image=4, val_fraction=0.2, test_fraction=0.25,
    )


@pytest.fixture
def tiny_config():
    return CameConfig(num_experts=3, hidden_dim=6, pw_temperature=0.8)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, d_x=5, d_c=4, m=7, seed=11)


def random_instance(rng, d_x=5, d_c=4, m=7) -> RelationInstance:
    return RelationInstance(
        image_id=0,
        pair_id=0,
        x=rng.normal(size=d_x),
        c=rng.normal(size=d_c),
        label=int(rng.integers(0, m)),
    )
