import numpy as np
import pytest

from lifi_po.channel import RoomLayout
from lifi_po.dataset import DatasetConfig, build_dataset, split
from lifi_po.geometry import DeviceGeometry
from lifi_po.lstm import TrainConfig, train
from lifi_po.mobility import MobilityConfig

DESK_SEED = 123


@pytest.fixture(scope="session")
def layout():
    return RoomLayout()


@pytest.fixture(scope="session")
def geom():
    return DeviceGeometry()


@pytest.fixture(scope="session")
def mobility():
    return MobilityConfig()


@pytest.fixture(scope="session")
def small_dataset(layout, mobility, geom):
    """600 samples; enough for fast training smoke tests."""
    return build_dataset(600, 7, DatasetConfig(n_samples=600), mobility, layout, geom)


@pytest.fixture(scope="session")
def desk_dataset(layout, mobility, geom):
    """The full desk-scale dataset used by the acceptance suite."""
    return build_dataset(20000, DESK_SEED, DatasetConfig(), mobility, layout, geom)


@pytest.fixture(scope="session")
def desk_split(desk_dataset):
    return split(desk_dataset)


@pytest.fixture(scope="session")
def desk_model(desk_split):
    """Desk training budget: 30 epochs on the 90% partition."""
    train_set, _ = desk_split
    model, history = train(train_set, TrainConfig(epochs=30, seed=4),
                           hidden_size=100)
    return model, history
