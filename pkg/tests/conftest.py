import numpy as np
import pytest

from tsci.forest import ForestParams, fit_forest, forest_weights


def toy_data(n, seed, p=3):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-2, 2, n)
    x = rng.normal(size=(n, p))
    d = z + z ** 2 + 0.5 * x[:, 0] + rng.normal(size=n)
    y = d + z + 0.3 * x[:, 1] + rng.normal(size=n)
    return y, d, z, x


def toy_forest_omega(n1, seed, trees=20, min_leaf=3):
    """Forest trained on a fresh A2 sample, evaluated on an A1 sample."""
    y, d, z, x = toy_data(n1 + n1 // 2, seed)
    c = np.column_stack([z, x])
    forest = fit_forest(c[n1:], d[n1:], ForestParams(num_trees=trees, min_leaf=min_leaf, seed=seed))
    om = forest_weights(forest, c[:n1])
    return om, (y[:n1], d[:n1], z[:n1], x[:n1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
CRITERIA = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(CRITERIA, key=lambda k: (int(str(k).rstrip("abcdef")), str(k))):
            terminalreporter.write_line(CRITERIA[key])
