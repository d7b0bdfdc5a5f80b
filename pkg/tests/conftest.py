import numpy as np
import pytest

from bipmixed import MultiViewDataset

# acceptance results, filled in by test_acceptance.py and echoed at the end of the run
CRITERIA: dict = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    CRITERIA[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (len(k), k)):
        passed, detail = CRITERIA[key]
        status = "PASS" if passed else "FAIL"
        if passed is None:
            status = "SKIP"
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    """Two views, three sites, families of two."""
    g = np.random.default_rng(7)
    n = 12
    U = g.standard_normal((n, 2))
    X1 = U @ g.standard_normal((2, 5)) + 0.5 * g.standard_normal((n, 5))
    X2 = U @ g.standard_normal((2, 4)) + 0.5 * g.standard_normal((n, 4))
    y = U @ np.array([1.0, -0.5]) + g.standard_normal(n)
    sites = np.repeat(["a", "b", "c"], 4)
    fams = np.repeat([f"f{k}" for k in range(6)], 2)
    return MultiViewDataset(views=(X1, X2), outcome=y, site_label=sites, family_label=fams)
