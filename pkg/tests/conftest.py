from __future__ import annotations

import numpy as np
import pytest

import topoderiv as td

UNIT_SQUARE = (0.0, 0.0, 1.0, 1.0)


def unit_spec(n, alpha=1.0, coeff_value=1.0, f=1.0, y_d=0.0):
    """Unit-square tracking problem with constant data."""
    mesh = td.build_rect_mesh(UNIT_SQUARE, n)
    params = td.AdmissibilityParams(alpha)
    values = np.full(mesh.n_elements, float(coeff_value))
    field = td.isotropic_field(mesh, values, params)
    source = np.full(mesh.n_vertices, float(f))
    target = np.full(mesh.n_vertices, float(y_d))
    return td.ProblemSpec(mesh, field, source, target, source_kind="nodal")


def random_admissible_matrix(rng, alpha):
    """Random 2x2 matrix whose symmetric part has eigenvalues >= alpha."""
    angle = rng.uniform(0.0, np.pi)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    eigs = alpha + rng.uniform(0.0, 2.0, size=2)
    sym = rot @ np.diag(eigs) @ rot.T
    skew = rng.uniform(-1.0, 1.0) * np.array([[0.0, 1.0], [-1.0, 0.0]])
    return sym + skew


@pytest.fixture(scope="session")
def spec64():
    return unit_spec(64)


@pytest.fixture(scope="session")
def solution64(spec64):
    return td.solve_problem(spec64)
