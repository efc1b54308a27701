import shutil
from pathlib import Path

import numpy as np
import pytest

from pereplica.timeseries import AssetPanel, NavSeries, ReturnSeries, business_days

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "pereplica" / "data" / "fixture"


def rs(values, start="2020-01-01", name="r"):
    v = np.asarray(values, dtype=float)
    return ReturnSeries(business_days(start, v.size), v, name)


def nav(values, start="2020-01-01"):
    v = np.asarray(values, dtype=float)
    return NavSeries(business_days(start, v.size), v, "nav")


def panel(matrix, names=None, start="2020-01-01"):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    names = names or tuple(f"a{k}" for k in range(m.shape[1]))
    return AssetPanel(business_days(start, m.shape[0]), tuple(names), m)


@pytest.fixture
def fixture_dir(tmp_path):
    """A writable copy of the bundled fixture."""
    dst = tmp_path / "fixture"
    shutil.copytree(FIXTURE_DIR, dst)
    return dst


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
