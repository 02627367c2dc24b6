import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

HEADER = "database_id,target_id,comparator_id,outcome_id,family_id,true_effect_size,log_estimate,se_log_estimate\n"


@pytest.fixture
def write_csv(tmp_path):
    """Write control rows (strings) under the standard header and return the path."""

    def _write(rows, name="controls.csv"):
        p = tmp_path / name
        p.write_text(HEADER + "".join(r + "\n" for r in rows), encoding="utf-8")
        return p

    return _write


@pytest.fixture
def four_rows():
    return [
        "db1,T1,C1,O1,F1,1,0.10,0.20",
        "db1,T1,C1,O1,F1,1.5,0.52,0.21",
        "db1,T1,C1,O1,F1,2,0.80,0.22",
        "db1,T1,C1,O1,F1,4,1.45,0.25",
    ]


# Acceptance criteria register here; the summary is printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
