import numpy as np
import pytest
from scipy.optimize import linprog

from hetfba import linprog as lp
from hetfba.fba import effective_bounds, run_fba, run_fba_scenario, run_fva
from hetfba.model_io import model_from_dict


def dense_oracle(model, lb, ub):
    """Plain scipy LP on dense arrays, sharing nothing with the package builder."""
    res = linprog(-model.c, A_eq=model.S.toarray(), b_eq=np.zeros(model.n_metabolites),
                  bounds=list(zip(lb, ub)), method="highs")
    assert res.status == 0
    return -res.fun


def test_unlimited_growth_matches_oracle(scenarios, model):
    s = scenarios["aerobic_unlimited"]
    sol = run_fba_scenario(s, model)
    lb, ub = effective_bounds(model, s.bounds, s.fixed)
    assert sol.growth == pytest.approx(dense_oracle(model, lb, ub), abs=1e-7)
    assert sol.growth == pytest.approx(0.8739215, abs=1e-6)
    assert sol["EX_glc__D_e"] == pytest.approx(-10.0, abs=1e-7)
    assert sol["ATPM"] == pytest.approx(8.39, abs=1e-9)


def test_total_limits_become_specific_bounds(scenarios, model):
    s = scenarios["aerobic_o2limited"]
    sol = run_fba_scenario(s, model)
    assert sol["EX_o2_e"] == pytest.approx(-12.0, abs=1e-7)
    assert sol.growth == pytest.approx(0.6240439, abs=1e-6)
    # doubling biomass halves the specific oxygen allowance
    lb, _ = effective_bounds(model, s.bounds, s.fixed, s.totals, total_biomass=2.0)
    assert lb[model.index("EX_o2_e")] == pytest.approx(-6.0)


def test_solution_is_steady_state(scenarios, model):
    sol = run_fba_scenario(scenarios["aerobic_unlimited"], model)
    assert np.abs(model.S @ sol.fluxes).max() < 1e-8
    lb, ub = effective_bounds(model, scenarios["aerobic_unlimited"].bounds, scenarios["aerobic_unlimited"].fixed)
    assert np.all(sol.fluxes >= lb - 1e-8) and np.all(sol.fluxes <= ub + 1e-8)


def test_closed_uptake_is_infeasible(model):
    with pytest.raises(lp.Infeasible):
        run_fba(model, {"EX_glc__D_e": (0.0, 1000.0)}, {"ATPM": 8.39})


def test_without_maintenance_growth_is_higher(model):
    free = run_fba(model, {"EX_glc__D_e": (-10.0, 1000.0), "ATPM": (0.0, 1000.0)})
    held = run_fba(model, {"EX_glc__D_e": (-10.0, 1000.0)}, {"ATPM": 8.39})
    assert free.growth > held.growth


def test_unbounded_toy_model():
    toy = model_from_dict({
        "metabolites": [{"id": "a_e", "compartment": "e"}, {"id": "a_c", "compartment": "c"}],
        "reactions": [
            {"id": "EX_a", "metabolites": {"a_e": -1}, "lower_bound": -np.inf, "upper_bound": 0},
            {"id": "T", "metabolites": {"a_e": -1, "a_c": 1}, "lower_bound": 0, "upper_bound": np.inf},
            {"id": "BIO", "metabolites": {"a_c": -1}, "lower_bound": 0, "upper_bound": np.inf,
             "objective_coefficient": 1},
        ],
    })
    with pytest.raises(lp.Unbounded):
        run_fba(toy)


def test_bad_overrides(model):
    with pytest.raises(KeyError):
        run_fba(model, {"NOPE": (0, 1)})
    with pytest.raises(ValueError, match="non-exchange"):
        effective_bounds(model, totals={"PGK": -1.0})


def test_fva_brackets_the_optimum(scenarios, model):
    s = scenarios["aerobic_unlimited"]
    sol = run_fba_scenario(s, model)
    ids = ["Biomass_Ecoli_core", "EX_glc__D_e", "EX_o2_e", "EX_pyr_e", "PGK"]
    ranges = run_fva(model, s.bounds, s.fixed, reactions=ids)
    lo, hi = ranges["Biomass_Ecoli_core"]
    assert lo == pytest.approx(sol.growth, abs=1e-7) and hi == pytest.approx(sol.growth, abs=1e-7)
    for rid in ids:
        lo, hi = ranges[rid]
        assert lo - 1e-7 <= sol[rid] <= hi + 1e-7


def test_fva_fraction_widens_ranges(scenarios, model):
    s = scenarios["aerobic_unlimited"]
    full = run_fva(model, s.bounds, s.fixed, reactions=["EX_o2_e"])
    relaxed = run_fva(model, s.bounds, s.fixed, optimality_fraction=0.9, reactions=["EX_o2_e"], workers=2)
    assert relaxed["EX_o2_e"][0] <= full["EX_o2_e"][0] + 1e-9
    assert relaxed["EX_o2_e"][1] >= full["EX_o2_e"][1] - 1e-9
    assert relaxed["EX_o2_e"][1] - relaxed["EX_o2_e"][0] > full["EX_o2_e"][1] - full["EX_o2_e"][0]
    with pytest.raises(ValueError):
        run_fva(model, optimality_fraction=0.0)
