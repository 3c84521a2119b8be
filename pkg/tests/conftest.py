import json

import numpy as np
import pytest

from fed_dpgan.config import get_settings
from fed_dpgan.data import synth_dataset
from fed_dpgan.nn import ModelSpec
from fed_dpgan.services.experiment import parse_config


@pytest.fixture
def env(monkeypatch):
    """monkeypatch for FED_DPGAN_* variables; the settings cache is cleared around the test."""
    get_settings.cache_clear()
    yield monkeypatch
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return ModelSpec.mlp([3, 5, 5, 2], ["tanh", "relu", "identity"], residual=[False, True, False])


@pytest.fixture
def small_dataset():
    return synth_dataset((30, 20, 10), d=16, seed=5)


TINY_CONFIG = {
    "rounds": 2,
    "clients": 5,
    "c_frac": 0.4,
    "local_epochs": 1,
    "batch_size": 10,
    "dataset": {"counts": [30, 20, 10], "dim": 16},
    "classifier": {"width": 8, "depth": 3, "residual_layers": [2, 3]},
    "gan": {"rounds": 2, "latent_dim": 2, "hidden_width": 8, "n_g": 2, "batch_m": 4, "fakes_per_client": 3},
    "privacy": {"n_d": 2},
}


@pytest.fixture
def tiny_config():
    """A pipeline small enough to run end to end in well under a second."""
    return parse_config(json.dumps(TINY_CONFIG))
