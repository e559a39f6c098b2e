import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetfba.pbm import (
    DivisionModel,
    Geometry,
    HillParameters,
    MassGrid,
    build_redistribution,
    division_rate,
    grid_table,
    mass_from_length,
    total_biomass,
    total_cells,
    upwind_advection,
    upwind_matrix,
    write_grid_csv,
)


def test_cylinder_mass():
    # rho * pi * D^2 / 4 * L
    assert mass_from_length(1.0) == pytest.approx(1.105 * math.pi / 4)
    assert mass_from_length(2.0, Geometry(1.0, 2.0)) == pytest.approx(2 * math.pi)
    np.testing.assert_allclose(mass_from_length([0.0, 1.0, 2.0]), np.array([0, 1, 2]) * 1.105 * math.pi / 4)
    with pytest.raises(ValueError):
        mass_from_length(-1.0)


def test_hill_division_rate():
    hill = HillParameters()
    assert division_rate(hill.h, hill) == pytest.approx(hill.k / 2)
    assert division_rate(0.0) == 0.0
    assert division_rate(100.0) == pytest.approx(hill.k, rel=1e-8)
    g = division_rate(np.linspace(0, 10, 50))
    assert np.all(np.diff(g) >= 0)
    with pytest.raises(ValueError):
        division_rate(-0.1)


def test_default_grid():
    g = MassGrid()
    np.testing.assert_allclose(g.lengths, np.arange(20) * 0.5 + 0.25)
    assert g.dL == 0.5
    np.testing.assert_allclose(np.diff(g.masses), g.dx)
    np.testing.assert_allclose(g.mass_edges[1:] - g.mass_edges[:-1], g.dx)
    assert g.masses[0] == pytest.approx(mass_from_length(0.25))
    assert len(g) == 20
    with pytest.raises(ValueError):
        MassGrid(bin_count=1)
    with pytest.raises(ValueError):
        MassGrid(mass_scale=0.0)


def test_mass_scale_is_a_pure_unit_change():
    a, b = MassGrid(), MassGrid(mass_scale=10.0)
    np.testing.assert_allclose(b.masses, 10 * a.masses)
    assert b.dx == pytest.approx(10 * a.dx)
    np.testing.assert_allclose(build_redistribution(a), build_redistribution(b), atol=1e-12)


def test_redistribution_hand_example():
    # unit-mass-per-length grid with centers at 0.5, 1.5, 2.5, 3.5
    g = MassGrid(4, 4.0, Geometry(4 / math.pi, 1.0))
    assert g.dx == pytest.approx(1.0)
    expected = np.array([
        [2.5, 1.5, 0.5, 0.0],
        [-0.5, 0.5, 1.5, 1.5],
        [0.0, 0.0, 0.0, 0.5],
        [0.0, 0.0, 0.0, 0.0],
    ])
    np.testing.assert_allclose(build_redistribution(g), expected, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 120),
    length=st.floats(0.5, 50.0),
    scale=st.sampled_from([0.01, 0.1, 1.0, 10.0, 1e3]),
)
def test_redistribution_conserves_count_and_mass(n, length, scale):
    g = MassGrid(n, length, mass_scale=scale)
    R = build_redistribution(g)
    np.testing.assert_allclose(R.sum(axis=0), 2.0, rtol=1e-12)
    np.testing.assert_allclose(g.masses @ R, g.masses, rtol=1e-12)
    # daughters never land above the mother's bin; only the first column extrapolates
    assert np.all(np.tril(R[:, 1:], -2) == 0)
    assert np.all(R[:, 1:] >= -1e-15)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-10, 10)), st.floats(0.01, 10))
def test_upwind_function_matches_matrix(F, dx):
    D = upwind_matrix(len(F), dx)
    np.testing.assert_allclose(D @ F, upwind_advection(F, dx), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(0, 10)), st.floats(0.01, 10))
def test_pure_growth_conserves_cell_number(F, dx):
    # sum_i (dn/dt)_i dx = -sum_i (D F)_i dx telescopes to zero with a closed right edge
    assert abs(upwind_advection(F, dx).sum() * dx) <= 1e-9 * max(1.0, F.sum())


def test_upwind_constant_flux():
    F = np.full(6, 3.0)
    out = upwind_advection(F, 0.5)
    assert out[0] == pytest.approx(6.0)
    np.testing.assert_allclose(out[1:-1], 0.0)
    assert out[-1] == pytest.approx(-6.0)


def test_upwind_mass_balance_excludes_last_bin():
    g = MassGrid(10, 5.0)
    F = np.linspace(1, 2, 10)
    growth = -(g.masses @ upwind_advection(F, g.dx)) * g.dx
    assert growth == pytest.approx(g.dx * F[:-1].sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), arrays(np.float64, 60, elements=st.floats(0, 5)))
def test_division_operator_moments(n, density):
    g = MassGrid(n, 10.0)
    div = DivisionModel.build(g)
    dn = div.operator() @ density[:n]
    # mass unchanged, one extra cell per division event
    assert abs(g.masses @ dn) <= 1e-10 * max(1.0, g.masses @ density[:n])
    assert np.sum(dn) == pytest.approx(div.rates @ density[:n], rel=1e-10, abs=1e-12)


def test_population_functionals():
    g = MassGrid(4, 4.0, Geometry(4 / math.pi, 1.0))
    n = np.array([1.0, 0.0, 2.0, 0.0])
    assert total_cells(n, g) == pytest.approx(3.0)
    assert total_biomass(n, g) == pytest.approx(0.5 + 2 * 2.5)


def test_grid_csv(tmp_path):
    div = DivisionModel.build(MassGrid(5, 5.0))
    rows = grid_table(div)
    assert [r["bin"] for r in rows] == list(range(5))
    path = tmp_path / "grid.csv"
    write_grid_csv(path, div)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin,L_left,L,L_right,x,gamma"
    assert len(lines) == 6
    with pytest.raises(ValueError):
        div.rates[0] = 1.0
