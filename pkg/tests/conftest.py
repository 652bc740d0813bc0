import numpy as np
import pytest

from gnnwm.graph import split_nodes, synth_graph
from gnnwm.numeric import Rng


@pytest.fixture(scope="session")
def small_graph():
    return synth_graph(Rng(3), N=40, F=30, C=2, p_intra=0.2, p_inter=0.02, feature_sparsity=0.5)


@pytest.fixture(scope="session")
def small_split(small_graph):
    return split_nodes(Rng(4), small_graph, (0.6, 0.2, 0.2))


@pytest.fixture
def rng():
    return Rng(12345)


def fd_grad(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + h
        fp = f(x)
        flat[i] = o - h
        fm = f(x)
        flat[i] = o
        gf[i] = (fp - fm) / (2 * h)
    return g


ACCEPTANCE_LINES: list = []


def record_criterion(number, passed, detail):
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
