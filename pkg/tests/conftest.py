import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bulkflux.geometry import build_interval, build_strip
from bulkflux.measures import make_pair, mollified_dirac

settings.register_profile("bulkflux", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bulkflux")

# acceptance lines collected during the run and printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def interval8():
    return build_interval(8)


@pytest.fixture
def strip6x4():
    return build_strip(6, 4, 1.0, 0.5)


def bump_pair(geom, loc, mass_interior, boundary, width=None, floor=0.0):
    """Interior bump plus boundary masses (array of length n_boundary)."""
    w = width if width is not None else 3 * geom.dx
    om = mollified_dirac(geom, loc, mass_interior, w)
    om = om + floor
    return make_pair(geom, om, np.asarray(boundary, dtype=float), normalize=True)
