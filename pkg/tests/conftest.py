"""Shared fixtures: the reference configuration solved once per session.

The expensive artifacts (fine-mesh background, coupled solve, identity
report) are session-scoped; individual tests treat them as read-only.
A coarse instance (shorter interval, fewer nodes) backs the tests that
need fresh solves or many of them.
"""

import numpy as np
import pytest

from gravortex.background import solve_background
from gravortex.bvp import discretize
from gravortex.diagnostics import identity_suite
from gravortex.gravitating import solve_coupled
from gravortex.mesh import Mesh
from gravortex.params import validate_params

REFERENCE = {"N": 3, "l": 1, "tau": 1.0, "V0": 7.0, "lambda": 1.0}


@pytest.fixture(scope="session")
def ref_params():
    return validate_params(REFERENCE)


@pytest.fixture(scope="session")
def ref_mesh():
    return Mesh.uniform(40.0, 2001)


@pytest.fixture(scope="session")
def ref_disc(ref_mesh):
    return discretize(ref_mesh, 6)


@pytest.fixture(scope="session")
def ref_background(ref_params, ref_mesh, ref_disc):
    return solve_background(ref_params, ref_mesh, disc=ref_disc)


@pytest.fixture(scope="session")
def ref_solution(ref_params, ref_mesh, ref_background, ref_disc):
    return solve_coupled(ref_params, ref_mesh, ref_background, disc=ref_disc)


@pytest.fixture(scope="session")
def ref_report(ref_solution):
    return identity_suite(ref_solution)


@pytest.fixture(scope="session")
def coarse_mesh():
    return Mesh.uniform(25.0, 801)


@pytest.fixture(scope="session")
def coarse_disc(coarse_mesh):
    return discretize(coarse_mesh, 6)


@pytest.fixture(scope="session")
def coarse_background(ref_params, coarse_mesh, coarse_disc):
    return solve_background(ref_params, coarse_mesh, disc=coarse_disc)


@pytest.fixture(scope="session")
def coarse_solution(ref_params, coarse_mesh, coarse_background, coarse_disc):
    return solve_coupled(ref_params, coarse_mesh, coarse_background, disc=coarse_disc)
