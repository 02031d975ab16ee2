import numpy as np
import pytest

from cmpgnn.graph import GraphBundle


@pytest.fixture
def path4():
    """Path 0-1-2-3 with labels 0,0,1,1 and 1-d features."""
    return GraphBundle(
        n=4,
        edges=np.array([[0, 1], [1, 2], [2, 3]]),
        x=np.arange(4, dtype=float)[:, None],
        y=np.array([0, 0, 1, 1]),
        num_classes=2,
        split=np.array(["train", "val", "test", "train"]),
    )


def random_graph(n, p, classes, feat, seed):
    rng = np.random.default_rng(seed)
    u, v = np.triu_indices(n, 1)
    keep = rng.random(len(u)) < p
    y = rng.integers(classes, size=n)
    y[:classes] = np.arange(classes)
    split = rng.choice(["train", "val", "test"], size=n)
    split[:classes] = "train"
    split[classes:2 * classes] = "val"
    return GraphBundle(n, np.stack([u[keep], v[keep]], 1), rng.normal(size=(n, feat)), y,
                       classes, split)


@pytest.fixture
def small_graph():
    return random_graph(30, 0.15, 3, 5, seed=1)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record a one-line PASS/FAIL verdict; all lines are repeated in the summary."""
    def record(number, name, ok, detail, seconds):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} {name}: {detail} ({seconds:.0f}s)"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
