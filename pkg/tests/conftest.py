import numpy as np
import pytest

from fdrasim.core import SlotState
from fdrasim.link_model import LinkGrid

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[str, str] = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"{criterion}: {'PASS' if ok else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def make_state(mcs, ri, payloads) -> SlotState:
    return SlotState.initial(LinkGrid.from_mcs_ri(mcs, ri), payloads)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
