import numpy as np
import pytest

from iscfseg import ModelConfig, desk_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk():
    return desk_config()


@pytest.fixture
def full_res_config():
    """224-input configuration at the widths used in the shape examples."""
    return ModelConfig(stage_channels=[64, 128, 256], depths=[1, 1, 1], heads=[2, 4, 8])


def f64(x):
    from iscfseg.numerics import Tensor

    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
