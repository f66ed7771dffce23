import numpy as np
import pytest

from cdvslite import synthetic
from cdvslite.imaging import GrayImage
from cdvslite.pipeline import default_bundle


@pytest.fixture(scope="session")
def bundle():
    return default_bundle()


@pytest.fixture(scope="session")
def eval_images():
    # seed differs from the one the shipped bundle was trained on
    return synthetic.corpus(10, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gaussian_blob(n=64, cx=32.0, cy=32.0, sigma=3.0, amp=0.4, base=0.3, width=None):
    width = width or n
    yy, xx = np.mgrid[0:n, 0:width].astype(np.float64)
    return GrayImage(base + amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma * sigma)))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
