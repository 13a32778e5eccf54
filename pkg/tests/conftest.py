import numpy as np
import pytest

from expertweights import build_score_matrix, load_table1

PUBLISHED_WEIGHTS = np.array([0.116, 0.142, 0.161, 0.171, 0.134, 0.131, 0.145])
PUBLISHED_DISTANCES = np.array([102.592, 83.876, 73.903, 69.927, 89.217, 90.910, 82.576])
PUBLISHED_ORDER = ("c4", "c3", "c7", "c2", "c5", "c6", "c1")


@pytest.fixture(scope="session")
def table1_panel():
    return load_table1()


@pytest.fixture(scope="session")
def table1(table1_panel):
    return build_score_matrix(table1_panel)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def criterion():
    """Record an acceptance criterion's outcome; returns the pass flag for asserting."""
    def record(name: str, passed: bool, detail: str = "") -> bool:
        passed = bool(passed)
        line = f"{'PASS' if passed else 'FAIL'}  {name}" + (f": {detail}" if detail else "")
        print(line)
        _CRITERIA.append((name, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}" + (f": {detail}" if detail else ""))
