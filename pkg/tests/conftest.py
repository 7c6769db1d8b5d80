import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hdbf.fstest import TwoSample  # noqa: E402


def random_two_sample(rng, n1, n2, p, loc=0.0, scale=1.0):
    x1 = rng.normal(loc, scale, size=(n1, p)) * rng.uniform(0.5, 3.0, size=p)
    x2 = rng.normal(loc, scale, size=(n2, p)) * rng.uniform(0.5, 3.0, size=p)
    return TwoSample.from_arrays(x1, x2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance verdicts, printed once at the end of the run whether or not
# output capture is on.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
