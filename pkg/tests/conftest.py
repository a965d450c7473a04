import json
import sys
from pathlib import Path

import pytest
from hypothesis import settings

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE / "oracles"))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def golden():
    return json.loads((HERE / "data" / "golden.json").read_text())


@pytest.fixture(scope="session")
def lattice_oracle():
    return json.loads((HERE / "data" / "lattice_oracle.json").read_text())


# Acceptance verdicts, filled in by test_acceptance.py: {number: (passed, detail)}.
ACCEPTANCE = {}
ACCEPTANCE_COUNT = 12


def pytest_terminal_summary(terminalreporter):
    ran = [n for n in range(1, ACCEPTANCE_COUNT + 1) if n in ACCEPTANCE]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
