import os

import numpy as np
import pytest

from src.channel_sim import PsuModel, Waveshape


def pytest_collection_modifyitems(config, items):
    if os.getenv("MODEM_HARDWARE_TESTS") == "1":
        return
    skip = pytest.mark.skip(reason="set MODEM_HARDWARE_TESTS=1 to drive real cores")
    for item in items:
        if "hardware" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_model():
    return PsuModel(waveshape=Waveshape.SINE)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "outputs"
