"""Shared fixtures: small meshes and toy load-space setups."""

import numpy as np
import pytest

import drotopo as dt


@pytest.fixture
def hooke():
    return dt.IsotropicHooke()


@pytest.fixture
def small_bridge():
    return dt.bridge_mesh(10, 10)


@pytest.fixture
def toy_1d():
    """Three collinear load nodes {0, 1, 2} with a single sample at 0.

    The classic hand-checkable instance: costs over the nodes are injected
    per test, sigma = eps = 0.1.
    """
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    grid = dt.LoadSpaceDiscretization(radius=2.0, nodes=nodes, spacing=1.0)
    nominal = dt.NominalLaw.from_samples([[0.0, 0.0]], grid)
    marginals = dt.reference_marginals(grid, nominal, 0.1)
    return grid, nominal, marginals


@pytest.fixture
def coarse_load_setup():
    """Moderate 2D load grid around the downward unit load."""
    grid = dt.build_load_grid(
        3.0, 0.25, refinement_centers=[[0.0, -1.0]], refinement_spacing=0.05, gaussian_scale=1e-2
    )
    nominal = dt.NominalLaw.from_samples([[0.0, -1.0]], grid)
    marginals = dt.reference_marginals(grid, nominal, 1e-2)
    return grid, nominal, marginals


def make_form(mesh, hooke, density_values, simp=None, filter_radius=None):
    """Filter -> SIMP -> assemble -> solve, the standard evaluation chain."""
    simp = simp or dt.SimpParams()
    if filter_radius is not None:
        simp = dt.SimpParams(
            void_fraction=simp.void_fraction,
            penalization=simp.penalization,
            p_schedule=simp.p_schedule,
            filter_radius=filter_radius,
        )
    h = dt.DensityField(mesh, density_values)
    physical = dt.density_filter(h, simp.filter_radius)
    scale = dt.simp_scale(physical, simp)
    return dt.compliance_form(mesh, hooke, scale)
