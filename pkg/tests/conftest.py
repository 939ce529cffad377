import sys

import numpy as np
import pytest

from gazestyle.lossnet import LossNet, small_spec, small_taps
from gazestyle.losses import LossConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_net64():
    """Two-convolution loss net in float64, for gradient checks."""
    return LossNet.random(small_spec(), seed=7).astype(np.float64)


@pytest.fixture
def small_cfg():
    return LossConfig(taps=small_taps())


def two_region_mask(h, w, radius_frac=0.3, center=None, dtype=np.float32):
    """1x2xHxW mask: channel 0 a disc (attention), channel 1 the rest."""
    cy, cx = center if center is not None else ((h - 1) / 2, (w - 1) / 2)
    ys, xs = np.mgrid[0:h, 0:w]
    disc = (np.hypot(ys - cy, xs - cx) <= radius_frac * min(h, w)).astype(dtype)
    return np.stack([disc, 1 - disc])[None]


def random_image(rng, h, w, dtype=np.float64):
    return rng.uniform(0, 255, (1, 3, h, w)).astype(dtype)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
