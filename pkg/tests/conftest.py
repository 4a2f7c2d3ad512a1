# conftest.py

import logging

import numpy as np
import pytest

from catpose import data, train
from catpose.model import IntegratedModel, ModelConfig

logging.getLogger('catpose').setLevel(logging.WARNING)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return ModelConfig(num_categories=3, input_dim=8, feature_hidden=(16,), feature_dim=8,
                       category_hidden=(8,), head_hidden=(16, 8))


@pytest.fixture
def tiny_model(tiny_config):
    return IntegratedModel(tiny_config).init_params(np.random.default_rng(7))


@pytest.fixture
def tiny_synth():
    return data.SynthConfig(num_categories=3, samples_per_category=24, input_dim=8, noise_sigma=0.05)


@pytest.fixture
def tiny_dataset(tiny_synth):
    return data.generate(tiny_synth, seed=3)


@pytest.fixture
def fast_train_config():
    return train.TrainConfig(batch_size=12)


@pytest.fixture
def fast_settings(tmp_path):
    """--set assignments that keep a CLI training run to a few seconds."""
    return [
        f"output_dir={tmp_path / 'run'}",
        "data.synth.samples_per_category=20",
        "data.synth.input_dim=8",
        "data.synth.num_categories=3",
        "data.test_per_category=6",
        "model.feature_hidden=[16]",
        "model.feature_dim=8",
        "model.category_hidden=[8]",
        "model.head_hidden=[16, 8]",
        "training.batch_size=12",
        "epochs.pretrain=2",
        "epochs.heads=2",
        "epochs.pose_first=2",
        "epochs.category=1",
        "epochs.joint=2",
    ]
