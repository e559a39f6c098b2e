"""Standard (homogeneous) flux balance analysis and flux variability."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linprog as lp
from .model_io import MetabolicModel


@dataclass(frozen=True)
class FbaSolution:
    growth: float
    fluxes: np.ndarray
    reaction_ids: tuple[str, ...]
    status: lp.Status = lp.Status.OPTIMAL

    def __getitem__(self, reaction_id: str) -> float:
        return float(self.fluxes[self.reaction_ids.index(reaction_id)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.reaction_ids, map(float, self.fluxes)))


def effective_bounds(
    model: MetabolicModel,
    bound_overrides=None,
    fixed_fluxes=None,
    totals=None,
    total_biomass: float = 1.0,
):
    """Per-mass flux bounds after applying scenario overrides.

    Population totals (mmol/h) become specific-rate lower bounds ``b / B`` so
    that FBA is comparable with the heterogeneous program at equal biomass.
    """
    lb = model.lower_bounds.copy()
    ub = model.upper_bounds.copy()
    for rid, (lo, hi) in (bound_overrides or {}).items():
        j = model.index(rid)
        lb[j], ub[j] = lo, hi
    for rid, b in (totals or {}).items():
        j = model.index(rid)
        if not model.reactions[j].is_exchange:
            raise ValueError(f"total limit on non-exchange reaction {rid!r}")
        lb[j] = max(lb[j], b / total_biomass)
    for rid, val in (fixed_fluxes or {}).items():
        j = model.index(rid)
        lb[j] = ub[j] = val
    bad = np.flatnonzero(lb > ub)
    if len(bad):
        raise ValueError(f"inconsistent bounds for {model.reactions[bad[0]].id!r}")
    return lb, ub


def fba_problem(model: MetabolicModel, lb, ub) -> lp.LpProblem:
    b = lp.LpBuilder(model.n_reactions, lb, ub, var_names=model.reaction_ids)
    b.add_rows(model.S, "==", 0.0, names=[f"bal_{m.id}" for m in model.metabolites])
    b.set_objective(model.c, lp.MAXIMIZE)
    return b.build()


def run_fba(
    model: MetabolicModel,
    bound_overrides=None,
    fixed_fluxes=None,
    totals=None,
    total_biomass: float = 1.0,
    **solve_kw,
) -> FbaSolution:
    """Maximize c^T v subject to S v = 0 and flux bounds.

    Raises :class:`linprog.Infeasible` or :class:`linprog.Unbounded`.
    """
    lb, ub = effective_bounds(model, bound_overrides, fixed_fluxes, totals, total_biomass)
    out = lp.solve(fba_problem(model, lb, ub), **solve_kw).raise_for_status()
    return FbaSolution(float(model.c @ out.x), out.x, tuple(model.reaction_ids))


def run_fba_scenario(scenario, model: MetabolicModel | None = None, **solve_kw) -> FbaSolution:
    model = model or scenario.load_model()
    return run_fba(
        model, scenario.bounds, scenario.fixed, scenario.totals, scenario.total_biomass, **solve_kw
    )


def run_fva(
    model: MetabolicModel,
    bound_overrides=None,
    fixed_fluxes=None,
    optimality_fraction: float = 1.0,
    reactions=None,
    totals=None,
    total_biomass: float = 1.0,
    workers: int | None = None,
    **solve_kw,
) -> dict[str, tuple[float, float]]:
    """Per-reaction flux range with growth held at ``optimality_fraction * mu*``."""
    if not 0 < optimality_fraction <= 1:
        raise ValueError("optimality_fraction must lie in (0, 1]")
    lb, ub = effective_bounds(model, bound_overrides, fixed_fluxes, totals, total_biomass)
    base = fba_problem(model, lb, ub)
    ref = lp.solve(base, **solve_kw).raise_for_status()
    mu_star = float(model.c @ ref.x)
    # floor slightly below the optimum so fraction 1 stays numerically feasible
    floor = optimality_fraction * mu_star - 1e-9 * max(1.0, abs(mu_star))
    prob = base.with_rows(model.c[None, :], ">=", floor)

    ids = list(reactions) if reactions is not None else model.reaction_ids
    idx = [model.index(r) for r in ids]

    def extreme(j, sense):
        e = np.zeros(model.n_reactions)
        e[j] = 1.0
        out = lp.solve(prob.with_objective(e, sense), **solve_kw).raise_for_status()
        return out.objective

    def both(j):
        return extreme(j, lp.MINIMIZE), extreme(j, lp.MAXIMIZE)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            ranges = list(ex.map(both, idx))
    else:
        ranges = [both(j) for j in idx]
    return dict(zip(ids, ranges))
