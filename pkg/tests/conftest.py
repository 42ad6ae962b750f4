import json
from pathlib import Path

import numpy as np
import pytest

from lrclass.freqdata import load_frequency_table, synthetic_table
from lrclass.simulate import DnaProfile

DATA = Path(__file__).parent / "data"
EXAMPLE_PRIORS = np.array([0.1, 0.2, 0.3, 0.4])


@pytest.fixture(scope="session")
def example_table():
    """Three-locus worked example, each column completed with a filler allele "99"."""
    return load_frequency_table(DATA / "example_completed.csv", EXAMPLE_PRIORS)


@pytest.fixture(scope="session")
def example_profiles():
    x1 = DnaProfile.of(("10", "10"), ("15", "17"), ("9", "10"))
    x2 = DnaProfile.of(("10", "11"), ("15", "15"), ("9", "10"))
    return x1, x2


@pytest.fixture(scope="session")
def reference_confusion():
    return json.loads((DATA / "reference_confusion.json").read_text())


@pytest.fixture(scope="session")
def substructured_table():
    return synthetic_table(4, 15, 10, divergence=0.01, priors=[0.11083, 0.36944, 0.35383, 0.16590], seed=7)


@pytest.fixture(scope="session")
def small_table():
    return synthetic_table(3, 5, 4, divergence=0.05, seed=3)


def write_csv(path, rows):
    path.write_text("".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    assert ok, f"criterion {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 10):
        ok, detail = ACCEPTANCE.get(k, (False, "did not complete"))
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
