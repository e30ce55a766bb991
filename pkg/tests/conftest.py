"""Shared fixtures for the slow acceptance runs."""
import pytest

from crossnet.models.config_models import CrossViewConfig, TrainConfig, WorldConfig
from crossnet.network.crossview import CrossViewModel
from crossnet.services import trainer
from crossnet.world.dataset import load_dataset, make_dataset


@pytest.fixture(scope="session")
def trained_world(tmp_path_factory):
    """Desk-default model trained on 512 synthetic scenes, with its train and test splits."""
    root = tmp_path_factory.mktemp("world")
    make_dataset(root, 512, 128, seed=0, cfg=WorldConfig(), threads=4)
    train_set, test_set = load_dataset(root, "train"), load_dataset(root, "test")
    model, _ = trainer.train_crossview(train_set, CrossViewModel(CrossViewConfig()),
                                       TrainConfig(epochs=10, batch_size=8, lr=1e-3))
    return model, train_set, test_set
