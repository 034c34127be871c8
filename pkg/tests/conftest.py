import numpy as np
import pytest

from dicperf.image_core import GrayImage, synth_speckle, synth_warped_pair


@pytest.fixture(scope="session")
def speckle():
    return synth_speckle(120, 120, seed=3)


@pytest.fixture(scope="session")
def shifted_pair(speckle):
    tgt, gt = synth_warped_pair(speckle, (3.25, -1.5))
    return speckle, tgt, gt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, shape=(64, 64)):
    return GrayImage(rng.integers(0, 256, size=shape).astype(float))


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
