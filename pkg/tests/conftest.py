import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ubix.core import BagLogits  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_bags(rng, n_bags=20, n_models=3, n_classes=5, labeled=True, min_inst=1, max_inst=8):
    bags = []
    for b in range(n_bags):
        n_inst = int(rng.integers(min_inst, max_inst + 1))
        label = int(rng.integers(1, n_classes + 1)) if labeled else None
        bags.append(BagLogits(f"bag-{b:03d}", rng.normal(0, 2, size=(n_inst, n_models, n_classes)), label))
    return bags


@pytest.fixture
def bags(rng):
    return random_bags(rng)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
