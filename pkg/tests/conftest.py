import numpy as np
import pytest

from nlbinscatter.data import Dataset


def uniform_data(n, mu=np.sin, noise=1.0, seed=0, d=0, gamma=0.5):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    w = rng.normal(size=(n, d))
    y = mu(x) + (w @ np.full(d, gamma) if d else 0.0) + noise * rng.normal(size=n)
    return Dataset.from_arrays(y, x, w if d else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, label, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:>2}. {label}: {detail}")
