import dataclasses

import numpy as np
import pytest

from hetfba import linprog as lp
from hetfba.fba import run_fba_scenario
from hetfba.hfba import (
    HfbaInputError,
    HfbaProgram,
    UnboundedGrowth,
    apply_no_cross_feed,
    assemble,
    average_fluxes,
    maximize_mu,
    probe,
    random_alternates,
    variability,
)
from hetfba.pbm import upwind_advection


@pytest.fixture(scope="module")
def program(solved):
    return solved.program("aerobic_unlimited")


def test_layout(program, model):
    assert program.n_vars == 20 * (1 + 95) == 1920
    names = program.var_names()
    assert names[program.n_index(3)] == "n[3]"
    assert names[program.w_index(3, 0)] == f"w[3].{model.reaction_ids[0]}"
    assert program.n_index(1) == 96


def test_rows_match_independent_residuals(program, model):
    """Evaluate the assembled rows at a random point and compare with direct formulas."""
    rng = np.random.default_rng(7)
    N, R = program.n_bins, program.n_reactions
    n = rng.uniform(0, 1, N)
    w = rng.normal(size=(N, R))
    v = np.column_stack([n, w]).ravel()
    mu = 0.37
    p = assemble(program, mu)
    Av = p.A @ v
    names = p.row_names

    g, div = program.grid, program.division
    G = w @ model.c
    pop = mu * n + upwind_advection(G, g.dx) + div.rates * n - div.redistribution @ (div.rates * n)
    np.testing.assert_allclose(Av[:N], pop, atol=1e-10)
    assert names[N] == "average_growth"
    assert Av[N] == pytest.approx(G.sum() * g.dx)
    assert p.rhs[N] == pytest.approx(mu * program.total_biomass)

    row = {name: k for k, name in enumerate(names)}
    assert Av[row["biomass"]] == pytest.approx(g.masses @ n * g.dx)
    assert Av[row["boundary_growth"]] == pytest.approx(G[-1])
    i, met = 4, model.metabolites[10].id
    assert Av[row[f"balance[{i}].{met}"]] == pytest.approx((model.S @ w[i])[10])
    j = model.index("EX_glc__D_e")
    assert Av[row[f"lb[{i}].EX_glc__D_e"]] == pytest.approx(w[i, j] + 10.0 * g.masses[i] * n[i])
    j = model.index("ATPM")
    assert Av[row[f"fixed[{i}].ATPM"]] == pytest.approx(w[i, j] - 8.39 * g.masses[i] * n[i])


def test_unlimited_solution(solved, scenarios, model):
    sol = solved("aerobic_unlimited")
    mu_fba = run_fba_scenario(scenarios["aerobic_unlimited"], model).growth
    assert mu_fba - 2e-6 <= sol.mu <= mu_fba + 1e-9
    assert sol.average_growth == pytest.approx(sol.mu, abs=1e-6)
    assert sol.total_biomass == pytest.approx(1.0, rel=1e-9)
    assert assemble(sol.program, sol.mu).violation(sol.vector()) < 1e-6
    avg = average_fluxes(sol)
    assert avg[model.index("EX_glc__D_e")] == pytest.approx(-10.0, rel=1e-6)


def test_population_oxygen_limit_binds(solved, model):
    sol = solved("aerobic_o2limited")
    total_o2 = sol.flux_density("EX_o2_e").sum() * sol.program.grid.dx
    assert total_o2 == pytest.approx(-12.0, rel=1e-6)
    assert sol.mu == pytest.approx(0.62404, abs=1e-4)


def test_equality_solution_is_stationary(solved):
    sol = solved("aerobic_unlimited", equality=True)
    g, div = sol.program.grid, sol.program.division
    dndt = -upwind_advection(sol.growth_density, g.dx) + div.operator() @ sol.n
    scale = np.abs(sol.mu * sol.n).max()
    assert np.abs(dndt - sol.mu * sol.n).max() <= 1e-6 * scale
    assert sol.average_growth == pytest.approx(sol.mu, rel=1e-8)


def test_no_cross_feed_solution(solved, scenarios, model):
    sol = solved("aerobic_unlimited", no_cross_feed=True)
    default = solved("aerobic_unlimited")
    assert sol.mu <= default.mu + 1e-9
    pyr = sol.flux_density("EX_pyr_e")
    assert np.all(pyr >= -1e-9 * sol.biomass_density.max())
    # without sharing, no bin can beat the single-cell optimum, so all growing bins sit on it
    mu_fba = run_fba_scenario(scenarios["aerobic_unlimited"], model).growth
    mu_i = sol.specific_growth[sol.occupied][:-1]
    np.testing.assert_allclose(mu_i, mu_fba, rtol=1e-5)


def test_cross_feeding_lets_bins_exchange_intermediates(solved):
    sol = solved("aerobic_unlimited")
    lb, _ = sol.program.bin_bounds()
    j = sol.program.model.index("EX_pyr_e")
    assert np.all(lb[:, j] < 0)  # uptake allowed per bin ...
    total = sol.flux_density("EX_pyr_e").sum() * sol.program.grid.dx
    assert total >= -1e-7  # ... but not for the population


def test_no_cross_feed_flag_handling(program):
    assert not program.no_cross_feed
    off = dataclasses.replace(program)
    a, b = assemble(program, 0.5), assemble(off, 0.5)
    assert (a.A != b.A).nnz == 0 and np.array_equal(a.rhs, b.rhs)
    on = apply_no_cross_feed(program)
    lb, _ = on.bin_bounds()
    assert lb[0, program.model.index("EX_pyr_e")] == 0.0
    assert lb[0, program.model.index("EX_o2_e")] == -1000.0
    with pytest.raises(HfbaInputError, match="EX_nope"):
        apply_no_cross_feed(program, medium=["EX_nope"])
    custom = apply_no_cross_feed(program, medium=["EX_glc__D_e"])
    lb, _ = custom.bin_bounds()
    assert lb[0, program.model.index("EX_o2_e")] == -1000.0  # model bound still applies


def test_probe_feasibility_is_monotone(program):
    feas = [probe(program, mu).optimal for mu in (0.0, 0.5, 0.85, 0.9, 1.2)]
    assert feas == [True, True, True, False, False]


def test_closed_medium_is_infeasible(solved, scenarios, model):
    s = dataclasses.replace(scenarios["aerobic_unlimited"],
                            bounds={"EX_glc__D_e": (0.0, 1000.0)})
    with pytest.raises(lp.Infeasible):
        maximize_mu(HfbaProgram.from_scenario(s, model))


def test_unbounded_growth_detection(program):
    with pytest.raises(UnboundedGrowth):
        maximize_mu(program, bracket=(0.0, 0.1), max_expansions=1)
    with pytest.raises(ValueError):
        maximize_mu(program, tolerance=0.0)


def test_input_validation(program, scenarios, model):
    with pytest.raises(HfbaInputError, match="biomass_coefficients"):
        dataclasses.replace(program, biomass_coefficients=np.zeros((3, 3)))
    with pytest.raises(HfbaInputError, match="totals"):
        dataclasses.replace(program, totals={"PGK": -1.0})
    s = dataclasses.replace(scenarios["aerobic_unlimited"], fixed={"NOPE": 1.0})
    with pytest.raises(HfbaInputError, match="NOPE"):
        HfbaProgram.from_scenario(s, model)


def test_mass_dependent_biomass_coefficients(scenarios, model):
    c = np.tile(model.c, (20, 1)) * np.linspace(0.9, 1.1, 20)[:, None]
    p = HfbaProgram.from_scenario(scenarios["aerobic_unlimited"], model, biomass_coefficients=c)
    np.testing.assert_array_equal(p.biomass_coefficients, c)


def test_specific_rates_hidden_in_empty_bins(solved):
    sol = solved("aerobic_unlimited")
    empty = ~sol.occupied
    assert empty.any()
    assert np.all(np.isnan(sol.specific_growth[empty]))
    assert np.all(np.isfinite(sol.specific_growth[sol.occupied]))
    assert np.isnan(sol.specific_fluxes[empty]).all()


def test_normalized_density_integrates_to_one(solved):
    sol = solved("aerobic_o2limited")
    assert sol.normalized_density.sum() * sol.program.grid.dL == pytest.approx(1.0, rel=1e-9)


def test_variability_contains_reference(solved):
    sol = solved("aerobic_o2limited", no_cross_feed=True)
    env = variability(sol.program, sol.mu, targets=("n", "growth"), reactions=("EX_o2_e",), workers=2)
    assert env.contains(sol)
    assert not np.isnan(env.lower("n")).any()
    np.testing.assert_allclose(env.lower("biomass"), env.lower("n") * sol.masses)
    assert env.total_width("biomass") > 0


def test_unique_density_has_collapsed_envelope(solved):
    sol = solved("aerobic_unlimited", equality=True, no_cross_feed=True)
    env = variability(sol.program, sol.mu, targets=("n", "growth"))
    assert env.width("n").max() <= 1e-3 * sol.n.max()
    # the growth envelope midpoints reproduce the average growth constraint
    mid = 0.5 * (env.lower("growth") + env.upper("growth"))
    assert mid.sum() * sol.program.grid.dx == pytest.approx(sol.mu * sol.program.total_biomass, rel=1e-4)


def test_random_alternates_are_optimal_and_seeded(solved):
    sol = solved("aerobic_o2limited")
    a = random_alternates(sol.program, sol.mu, 2, seed=3)
    b = random_alternates(sol.program, sol.mu, 2, seed=3)
    assert len(a) == 2
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.n, y.n)
        assert x.average_growth >= sol.mu * (1 - 1e-6)
