import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vpflow import flow as fl
from vpflow.ambient import conformal_powerlaw, minkowski_torus
from vpflow.curvfun import CurvatureFunctionSpec, SupplementarySpec
from vpflow.grid import Grid, ScalarField

settings.register_profile("vpflow", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("vpflow")

TWO_PI = 2 * math.pi


def make_config(spec, N, F="mean", phi="identity", force=("preserve", 0), cone="", **kw):
    grid = Grid((N,) * spec.n, (TWO_PI,) * spec.n)
    kind, arg = force
    mode = fl.ForceMode(kind, arg) if kind == "preserve" else fl.ForceMode(kind, 0, arg)
    return fl.FlowConfig(spec, grid, CurvatureFunctionSpec(F, spec.n, cone),
                         SupplementarySpec(phi), mode, **kw)


def wavy(grid, offset=0.0, amp=0.1):
    x = grid.coords()
    u = offset + amp * np.sin(x[..., 0])
    if grid.n >= 2:
        u = u + 0.5 * amp * np.cos(x[..., 1])
    return ScalarField(grid, u)


@pytest.fixture
def flat1():
    return minkowski_torus(1)


@pytest.fixture
def powerlaw1():
    return conformal_powerlaw(1)


@pytest.fixture
def powerlaw2():
    return conformal_powerlaw(2)
