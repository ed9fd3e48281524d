import numpy as np
import pytest

from milrank.data import Bag
from milrank.model import ModelConfig, init_params

TOY = ModelConfig(dv=8, da=4, hv=6, hf=5, ds=3, hc=3, k=2)


def random_bag(rng, n=5, config=TOY, scale=0.5):
    return Bag(
        vision=scale * rng.standard_normal((n, config.dv)),
        audio=scale * rng.standard_normal((n, config.da)),
        polarity="positive",
        source_video="rand",
        instance_indices=np.arange(n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_params():
    return init_params(TOY, 77)


def pytest_terminal_summary(terminalreporter):
    """Surface the acceptance criterion pass/fail lines past output capture."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
