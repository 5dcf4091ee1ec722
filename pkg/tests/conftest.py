import numpy as np
import pytest

from redfwi.velocity_models import VelocityModel
from redfwi.wave import AcquisitionGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    """16x16 two-layer model with a smooth lateral bump."""
    v = np.full((16, 16), 2000.0)
    v[8:, :] = 2600.0
    v[5:9, 6:10] += 150.0
    return VelocityModel(v, 10.0)


@pytest.fixture(scope="session")
def small_geometry():
    return AcquisitionGeometry(
        source_positions=[(1, 4), (1, 11)],
        receiver_positions=[(1, c) for c in range(0, 16, 2)],
        nt=200, dt=0.001, wavelet_peak_frequency=25.0, sponge_width=6)


def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line acceptance verdicts, which pytest captures for passing tests."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith("ACCEPTANCE ")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(ln)
