import numpy as np
import pytest

from elastinet import data as dt
from elastinet.model import ArchConfig
from elastinet.synth import SyntheticWorld, generate
from elastinet.training import TrainConfig, prepare_model, train

SMALL_ARCH = ArchConfig(trunk_widths=(24, 12), injection_width=16, post_widths=(8,), encoder_width=4)


@pytest.fixture(scope="session")
def small_world():
    world = SyntheticWorld(n_items=24, n_months=16, seed=101, noise_sigma=0.05)
    records, truths = generate(world)
    return world, records, truths


@pytest.fixture(scope="session")
def small_split(small_world):
    _, records, _ = small_world
    return dt.split(dt.build_pairs(records), seed=101)


@pytest.fixture(scope="session")
def untrained_model(small_split):
    return prepare_model(small_split, SMALL_ARCH, seed=101)


@pytest.fixture(scope="session")
def trained_model(small_split):
    model = prepare_model(small_split, SMALL_ARCH, seed=101)
    report = train(model, small_split, TrainConfig(epochs=6, seed=101))
    return model, report


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
