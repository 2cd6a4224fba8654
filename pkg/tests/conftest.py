import logging
import tempfile
from pathlib import Path

import numpy as np
import pytest

from histlayer.binning import BinningConfig
from histlayer.colorspace import write_png


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config16():
    return BinningConfig(bins=16)


@pytest.fixture
def random_channel(rng, config16):
    return rng.uniform(config16.vmin, config16.vmax, size=(8, 8))


@pytest.fixture
def png_factory(temp_dir):
    def make(name: str, img: np.ndarray) -> str:
        path = temp_dir / name
        write_png(path, img)
        return str(path)

    return make


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    logger = logging.getLogger("histlayer")
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
