import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def rig():
    from stereotac.stereo.camera import ideal_rig
    return ideal_rig()


@pytest.fixture(scope="session")
def small_reconstructor():
    """Quick transparent-membrane calibration shared by the tactile tests."""
    from stereotac.experiments import calibrate_membrane
    from stereotac.sim.membranes import preset
    return calibrate_membrane(preset("transparent"), n_presses=12, seed=3, n_epochs=600)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
