import sys

import numpy as np
import pytest

from cortexwave.cortex import GridGeometry, SimParams
from cortexwave.wavesim import CortexState, train


def disc_cells(geometry, cx, cy, r):
    x, y = geometry.xy
    return np.flatnonzero((x - cx) ** 2 + (y - cy) ** 2 <= r * r).tolist()


def disc_pattern(geometry, cx, cy, r, n, seed):
    """``n`` cells sampled from the disc; same draw as the config ``disc`` spec."""
    gen = np.random.default_rng([seed, 0xD15C])
    return sorted(gen.choice(disc_cells(geometry, cx, cy, r), n, replace=False).tolist())


@pytest.fixture(scope="session")
def reference_geometry():
    return GridGeometry(100, 100, 8.0)


@pytest.fixture(scope="session")
def trained_reference(reference_geometry):
    """A reference cortex trained on one central pattern (do not mutate)."""
    g = reference_geometry
    state = CortexState(g, SimParams.calibrated(g, seed=0))
    result = train(state, disc_pattern(g, 50, 50, 4, 10, 0))
    return result


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None:
        return
    lines = {int(line.split()[2].rstrip(":")): line for line in module.LINES}
    ran = {int(r.nodeid.split("test_criterion_")[1][:2]) for key in ("passed", "failed")
           for r in terminalreporter.stats.get(key, []) if "test_criterion_" in r.nodeid}
    terminalreporter.section("acceptance criteria")
    for n in sorted(ran):
        terminalreporter.write_line(lines.get(n, f"FAIL criterion {n}: raised before reporting"))
