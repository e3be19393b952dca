import filecmp

import numpy as np
import pytest

from core.dataset import DatasetSpec, generate_dataset
from core.mechanics import FREQUENCY_LABELS
from core.raster import RasterConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


@pytest.fixture
def same_tree():
    """Byte-for-byte comparison of two directory trees"""
    return _same_tree


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec():
    return DatasetSpec(
        size=40,
        label_set=FREQUENCY_LABELS,
        raster=RasterConfig(img_size=32),
        seed=11,
    )


@pytest.fixture(scope="session")
def small_dataset(small_spec, tmp_path_factory):
    """40 oracle-labeled 32px samples, generated once per session"""
    return generate_dataset(small_spec, tmp_path_factory.mktemp("small_dataset"))
