import numpy as np
import pytest

from pasa.blockstats import compute_block_statistics
from pasa.oracle import AttentionInstance

ACCEPTANCE_LINES = []


def random_instance(seed, S=32, d=4, scale=None):
    rng = np.random.default_rng(seed)
    return AttentionInstance(*(rng.standard_normal((S, d)) for _ in range(3)), scale=scale)


@pytest.fixture
def small():
    inst = random_instance(0, S=32, d=4)
    return inst, compute_block_statistics(inst.K, inst.V, 4, 2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
