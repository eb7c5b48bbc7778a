import numpy as np
import pytest

from gnnverify.graph import Graph, generate_sbm


def make_graph(n, edges, d=2, labels=None, train=None, test=None, seed=0, num_classes=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = np.zeros(n, int) if labels is None else np.asarray(labels)
    tr = np.zeros(n, bool) if train is None else np.asarray(train, bool)
    te = np.zeros(n, bool) if test is None else np.asarray(test, bool)
    from gnnverify.graph import normalize_edges
    return Graph(x, y, normalize_edges(edges), tr, np.zeros(n, bool), te, num_classes=num_classes)


def random_graph(n, p, d, c, seed):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    labels = rng.integers(0, c, n)
    train = np.zeros(n, bool)
    train[: n // 2] = True
    test = ~train
    g = make_graph(n, edges, d, labels, train, test, seed, num_classes=c)
    return g


@pytest.fixture(scope="session")
def sbm200():
    return generate_sbm([100, 100], 0.1, 0.01, 16, 0, noise=0.5)


@pytest.fixture(scope="session")
def sbm40():
    return generate_sbm([20, 20], 0.9, 0.05, 8, 1001)


@pytest.fixture
def path5():
    return make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])


# One PASS/FAIL line per acceptance criterion, printed after the run.
_CRITERIA: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and not rep.passed):
        return
    status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
    _CRITERIA.append(f"{status} [{mark.args[0]}] {mark.args[1]}")
    print(f"\n{_CRITERIA[-1]}")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
