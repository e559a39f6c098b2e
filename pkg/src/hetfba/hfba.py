"""Heterogeneous FBA: flux balance with a cell-mass population balance.

Decision variables per mass bin i are the number density ``n_i`` and the
scaled flux vector ``w_i = v(x_i) * x_i * n_i``. For a fixed average growth
rate ``mu`` every constraint is linear in (n, w), so the maximal ``mu`` is
found by bisection on LP feasibility.

Variables are laid out bin-major: ``[n_0, w_0,0 .. w_0,R-1, n_1, w_1,0, ...]``.

Exchange handling
-----------------
Each bin balances all metabolite rows, so a bin's exchange flux is its net
secretion. Exchanges outside the medium (lower bound >= 0 in the model, e.g.
pyruvate) may be taken up by individual bins as long as the population as a
whole does not take them up; this is what permits cross-feeding between size
classes. ``no_cross_feed`` restores the per-bin secretion-only bound.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import linprog as lp
from .fba import effective_bounds
from .model_io import MetabolicModel
from .pbm import DivisionModel, MassGrid, upwind_matrix

log = logging.getLogger(__name__)

EQUALITY, INEQUALITY = "equality", "inequality"


class HfbaInputError(ValueError):
    """A constraint family could not be built from the given inputs."""


class UnboundedGrowth(lp.Unbounded):
    pass


@dataclass(frozen=True, eq=False)
class HfbaProgram:
    """Everything needed to assemble the discretized program for any ``mu``.

    ``lower``/``upper`` are per-mass bounds (mmol/gCDW/h) of shape (N, R) and
    ``biomass_coefficients`` has shape (N, R), so mass-dependent bounds and
    biomass compositions are supported. ``totals`` maps exchange ids to a
    lower limit on the population sum of that exchange (mmol/h).
    """

    model: MetabolicModel
    grid: MassGrid
    division: DivisionModel
    total_biomass: float
    lower: np.ndarray
    upper: np.ndarray
    biomass_coefficients: np.ndarray
    totals: dict[str, float] = field(default_factory=dict)
    medium: tuple[str, ...] = ()
    equality_mode: bool = False
    no_cross_feed: bool = False
    mu_tolerance: float = 1e-6

    def __post_init__(self):
        N, R = self.grid.bin_count, self.model.n_reactions
        for name in ("lower", "upper", "biomass_coefficients"):
            arr = getattr(self, name)
            if arr.shape != (N, R):
                raise HfbaInputError(f"{name}: expected shape {(N, R)}, got {arr.shape}")
        if np.any(self.lower > self.upper):
            raise HfbaInputError("bounds: lower bound above upper bound")
        exchanges = set(self.model.exchange_ids)
        for rid in self.totals:
            if rid not in exchanges:
                raise HfbaInputError(f"totals: {rid!r} is not an exchange reaction")
        for rid in self.medium:
            if rid not in exchanges:
                raise HfbaInputError(f"medium: {rid!r} is not an exchange reaction")
        if self.total_biomass <= 0:
            raise HfbaInputError("total biomass must be positive")

    @classmethod
    def from_scenario(cls, scenario, model: MetabolicModel | None = None, biomass_coefficients=None):
        model = model or scenario.load_model()
        grid = MassGrid.from_scenario(scenario)
        division = DivisionModel.build(grid, scenario.hill)
        N = grid.bin_count
        for family in ("bounds", "fixed", "totals"):
            unknown = [r for r in getattr(scenario, family) if r not in model.reaction_index]
            if unknown:
                raise HfbaInputError(f"{family}: unknown reaction(s) {unknown}")
        # totals enter as population rows, not as per-mass bounds
        lb, ub = effective_bounds(model, scenario.bounds, scenario.fixed)
        if scenario.medium is None:
            medium = tuple(model.reactions[j].id for j in model.exchange_indices if lb[j] < 0)
        else:
            medium = tuple(scenario.medium)
        c = model.c if biomass_coefficients is None else np.asarray(biomass_coefficients, float)
        c = np.broadcast_to(c, (N, model.n_reactions)).copy()
        return cls(
            model=model,
            grid=grid,
            division=division,
            total_biomass=scenario.total_biomass,
            lower=np.tile(lb, (N, 1)),
            upper=np.tile(ub, (N, 1)),
            biomass_coefficients=c,
            totals=dict(scenario.totals),
            medium=medium,
            equality_mode=scenario.equality_mode,
            no_cross_feed=scenario.no_cross_feed,
            mu_tolerance=scenario.mu_tolerance,
        )

    # --- layout ---------------------------------------------------------------

    @property
    def n_bins(self) -> int:
        return self.grid.bin_count

    @property
    def n_reactions(self) -> int:
        return self.model.n_reactions

    @property
    def stride(self) -> int:
        return 1 + self.n_reactions

    @property
    def n_vars(self) -> int:
        return self.n_bins * self.stride

    def n_index(self, i: int) -> int:
        return i * self.stride

    def w_index(self, i: int, r: int) -> int:
        return i * self.stride + 1 + r

    @property
    def mode(self) -> str:
        return EQUALITY if self.equality_mode else INEQUALITY

    @cached_property
    def _non_medium_exchanges(self) -> np.ndarray:
        med = set(self.medium)
        return np.array(
            [j for j in self.model.exchange_indices if self.model.reactions[j].id not in med],
            dtype=int,
        )

    def bin_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-mass bounds applied inside each bin."""
        lb, ub = self.lower.copy(), self.upper.copy()
        if not self.no_cross_feed:
            for j in self._non_medium_exchanges:
                lb[:, j] = np.minimum(lb[:, j], -np.abs(ub[:, j]))
        return lb, ub

    def population_limits(self) -> dict[int, float]:
        """Reaction index -> lower limit on sum_i w_ir dx (mmol/h)."""
        limits = {}
        if not self.no_cross_feed:
            for j in self._non_medium_exchanges:
                # the bins' own lower bound, now enforced for the population
                limits[int(j)] = float(np.max(self.lower[:, j])) * self.total_biomass
        for rid, b in self.totals.items():
            j = self.model.index(rid)
            limits[j] = max(limits.get(j, -np.inf), b)
        return limits

    def _place(self, An=None, Aw=None) -> sp.csr_matrix:
        """Map row blocks over n (N cols) and w (N*R cols) into the bin-major layout."""
        rows = (An if An is not None else Aw).shape[0]
        parts = []
        if An is not None:
            An = sp.coo_matrix(An)
            parts.append((An.row, An.col * self.stride, An.data))
        if Aw is not None:
            Aw = sp.coo_matrix(Aw)
            i, r = np.divmod(Aw.col, self.n_reactions)
            parts.append((Aw.row, i * self.stride + 1 + r, Aw.data))
        row = np.concatenate([p[0] for p in parts])
        col = np.concatenate([p[1] for p in parts])
        val = np.concatenate([p[2] for p in parts])
        return sp.csr_matrix((val, (row, col)), shape=(rows, self.n_vars))

    @cached_property
    def growth_operator(self) -> sp.csr_matrix:
        """(N, N*R) block-diagonal map w -> G_i = c_i^T w_i."""
        N, R = self.n_bins, self.n_reactions
        rows = np.repeat(np.arange(N), R)
        cols = np.arange(N * R)
        return sp.csr_matrix((self.biomass_coefficients.ravel(), (rows, cols)), shape=(N, N * R))

    def growth_vars(self) -> sp.csr_matrix:
        """(N, V) rows selecting the growth flux density c_i^T w_i."""
        return self._place(Aw=self.growth_operator)

    @cached_property
    def _static(self) -> tuple:
        """Rows independent of mu, assembled once."""
        N, R = self.n_bins, self.n_reactions
        g, dx, x = self.grid, self.grid.dx, self.grid.masses
        blocks = []

        # (c) no growth flux out of the last bin
        C = self.growth_operator
        blocks.append((self._place(Aw=C[N - 1:N]), lp.EQ, np.zeros(1), ["boundary_growth"]))

        # (d) quasi-steady state per bin (all metabolite rows; exchanges close S_Y)
        S = self.model.S
        Sblk = sp.kron(sp.identity(N), S, format="csr")
        names = [f"balance[{i}].{m.id}" for i in range(N) for m in self.model.metabolites]
        blocks.append((self._place(Aw=Sblk), lp.EQ, np.zeros(Sblk.shape[0]), names))

        # (e) population exchange limits
        limits = self.population_limits()
        if limits:
            idx = sorted(limits)
            rows = []
            for k, j in enumerate(idx):
                rows.append(sp.coo_matrix((np.full(N, dx), (np.full(N, k), np.arange(N) * R + j)),
                                          shape=(len(idx), N * R)))
            Ae = sum(rows[1:], rows[0])
            blocks.append((self._place(Aw=Ae), lp.GE, np.array([limits[j] for j in idx]),
                           [f"total.{self.model.reactions[j].id}" for j in idx]))

        # (g) biomass normalization
        blocks.append((self._place(An=(x * dx)[None, :]), lp.EQ,
                       np.array([self.total_biomass]), ["biomass"]))

        # (h) flux bounds scaled by bin biomass x_i n_i
        lb, ub = self.bin_bounds()
        fixed_rows, lo_rows, hi_rows = [], [], []
        for i in range(N):
            for r in range(R):
                if lb[i, r] == ub[i, r]:
                    fixed_rows.append((i, r, lb[i, r]))
                    continue
                if np.isfinite(lb[i, r]):
                    lo_rows.append((i, r, lb[i, r]))
                if np.isfinite(ub[i, r]):
                    hi_rows.append((i, r, ub[i, r]))

        def bound_block(entries, sign):
            # sign * (w_ir - bound * x_i n_i) >= 0
            k = np.arange(len(entries))
            i = np.array([e[0] for e in entries], dtype=int)
            r = np.array([e[1] for e in entries], dtype=int)
            bnd = np.array([e[2] for e in entries], dtype=float)
            Aw = sp.coo_matrix((np.full(len(k), sign), (k, i * R + r)), shape=(len(k), N * R))
            An = sp.coo_matrix((-sign * bnd * x[i], (k, i)), shape=(len(k), N))
            return self._place(An, Aw)

        rid = self.model.reaction_ids
        if fixed_rows:
            blocks.append((bound_block(fixed_rows, 1.0), lp.EQ, np.zeros(len(fixed_rows)),
                           [f"fixed[{i}].{rid[r]}" for i, r, _ in fixed_rows]))
        if lo_rows:
            blocks.append((bound_block(lo_rows, 1.0), lp.GE, np.zeros(len(lo_rows)),
                           [f"lb[{i}].{rid[r]}" for i, r, _ in lo_rows]))
        if hi_rows:
            blocks.append((bound_block(hi_rows, -1.0), lp.GE, np.zeros(len(hi_rows)),
                           [f"ub[{i}].{rid[r]}" for i, r, _ in hi_rows]))
        return tuple(blocks)

    def mu_rows(self, mu: float):
        """Rows (b) and (f), which carry mu."""
        N = self.n_bins
        dx = self.grid.dx
        gam = self.division.rates
        Rm = self.division.redistribution
        # (b): mu n + D G + gamma n - R gamma n <= 0
        An = mu * np.eye(N) + np.diag(gam) - Rm * gam[None, :]
        D = upwind_matrix(N, dx)
        Ab = self._place(An=An, Aw=D @ self.growth_operator)
        rel = lp.EQ if self.equality_mode else lp.LE
        # (f): dx sum_i G_i >= mu B
        Af = self._place(Aw=dx * sp.csr_matrix(self.growth_operator.sum(axis=0)))
        frel = lp.EQ if self.equality_mode else lp.GE
        return [
            (Ab, rel, np.zeros(N), [f"population[{i}]" for i in range(N)]),
            (Af, frel, np.array([mu * self.total_biomass]), ["average_growth"]),
        ]

    def var_names(self) -> list[str]:
        names = []
        for i in range(self.n_bins):
            names.append(f"n[{i}]")
            names.extend(f"w[{i}].{r}" for r in self.model.reaction_ids)
        return names

    @cached_property
    def epsilon(self) -> float:
        """Biomass-density threshold below which specific rates are not reported."""
        return 1e-9 * self.total_biomass / (self.grid.masses[-1] * self.grid.dx)


def assemble(program: HfbaProgram, mu: float) -> lp.LpProblem:
    """Build the feasibility LP for a fixed average growth rate ``mu``."""
    b = lp.LpBuilder(program.n_vars, -np.inf, np.inf, var_names=program.var_names())
    b.lower[:: program.stride] = 0.0
    for A, rel, rhs, names in (*program.mu_rows(mu), *program._static):
        b.add_rows(A, rel, rhs, names)
    return b.build()


def apply_no_cross_feed(program: HfbaProgram, medium=None) -> HfbaProgram:
    """Forbid uptake of non-medium exchanges in every bin."""
    if medium is not None:
        medium = tuple(medium)
        exchanges = set(program.model.exchange_ids)
        bad = [m for m in medium if m not in exchanges]
        if bad:
            raise HfbaInputError(f"medium: unknown exchange reaction(s) {bad}")
        return replace(program, no_cross_feed=True, medium=medium)
    return replace(program, no_cross_feed=True)


@dataclass(frozen=True, eq=False)
class HfbaSolution:
    program: HfbaProgram
    mu: float
    n: np.ndarray
    w: np.ndarray
    probes: tuple[tuple[float, bool], ...] = ()

    @classmethod
    def from_vector(cls, program, mu, x, probes=()):
        X = np.asarray(x, float).reshape(program.n_bins, program.stride)
        n = np.maximum(X[:, 0], 0.0)
        return cls(program, float(mu), n, X[:, 1:].copy(), tuple(probes))

    @property
    def mode(self) -> str:
        return self.program.mode

    @property
    def masses(self) -> np.ndarray:
        return self.program.grid.masses

    @property
    def biomass_density(self) -> np.ndarray:
        return self.masses * self.n

    @property
    def growth_density(self) -> np.ndarray:
        return np.einsum("ir,ir->i", self.program.biomass_coefficients, self.w)

    @property
    def occupied(self) -> np.ndarray:
        return self.biomass_density > self.program.epsilon

    @property
    def specific_growth(self) -> np.ndarray:
        """mu(x_i); NaN in bins whose biomass density is below the threshold."""
        out = np.full(self.program.n_bins, np.nan)
        occ = self.occupied
        out[occ] = self.growth_density[occ] / self.biomass_density[occ]
        return out

    @property
    def specific_fluxes(self) -> np.ndarray:
        out = np.full(self.w.shape, np.nan)
        occ = self.occupied
        out[occ] = self.w[occ] / self.biomass_density[occ, None]
        return out

    @property
    def total_biomass(self) -> float:
        return float(self.biomass_density.sum() * self.program.grid.dx)

    @property
    def average_growth(self) -> float:
        """Biomass-weighted mean specific growth rate."""
        return float(self.growth_density.sum() * self.program.grid.dx / self.program.total_biomass)

    @property
    def normalized_density(self) -> np.ndarray:
        """Biomass fraction per unit cell length (1/um); independent of mass units."""
        g = self.program.grid
        return self.biomass_density * g.mass_per_length / self.program.total_biomass

    def flux_density(self, reaction_id: str) -> np.ndarray:
        return self.w[:, self.program.model.index(reaction_id)]

    def vector(self) -> np.ndarray:
        return np.column_stack([self.n, self.w]).ravel()


def average_fluxes(solution: HfbaSolution) -> np.ndarray:
    """Population-average specific fluxes (sum_i w_i dx) / B."""
    return solution.w.sum(axis=0) * solution.program.grid.dx / solution.program.total_biomass


def probe(program: HfbaProgram, mu: float, margin_tol: float = 1e-10, **solve_kw) -> lp.LpOutcome:
    """Feasibility of the program at ``mu``.

    Decided by minimizing the violation of the mu-dependent rows (population
    balance per bin and average growth), weighted to biomass units, rather
    than by asking the solver for an infeasibility certificate.
    """
    N = program.n_bins
    weights = np.append(program.grid.masses * program.grid.dx, 1.0)
    return lp.solve_feasibility(
        assemble(program, mu),
        np.arange(N + 1),
        weights,
        margin_tol=margin_tol * max(1.0, program.total_biomass),
        **solve_kw,
    )


def _seed_scan(program, lo, hi, points, solve_kw):
    """Largest feasible point of an even grid on (lo, hi); for equality mode."""
    best = None
    grid = np.linspace(lo, hi, points + 2)[1:-1]
    for k in range(len(grid) - 1, -1, -1):
        out = probe(program, grid[k], **solve_kw)
        if out.optimal:
            upper = grid[k + 1] if k + 1 < len(grid) else hi
            best = (grid[k], out, upper)
            break
    return best


def maximize_mu(
    program: HfbaProgram,
    bracket: tuple[float, float] = (0.0, 5.0),
    tolerance: float | None = None,
    max_expansions: int = 8,
    seed_points: int = 32,
    **solve_kw,
) -> HfbaSolution:
    """Largest feasible average growth rate, by bisection on LP feasibility.

    In inequality mode feasibility is monotone in mu, so the lower end of the
    bracket must be feasible. Equality mode is not monotone near mu = 0; if
    the lower end is infeasible there, an even grid of ``seed_points`` probes
    locates a feasible starting point.
    """
    tol = program.mu_tolerance if tolerance is None else tolerance
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    lo, hi = map(float, bracket)
    probes = []

    out_lo = probe(program, lo, **solve_kw)
    probes.append((lo, out_lo.optimal))
    if not out_lo.optimal:
        seed = None
        if program.equality_mode:
            seed = _seed_scan(program, lo, hi, seed_points, solve_kw)
        if seed is None:
            raise lp.Infeasible(
                f"program is infeasible at mu = {lo:g} ({out_lo.status.value}); "
                "check maintenance and uptake bounds"
            )
        lo, out_lo, hi = seed
        probes.append((lo, True))
    else:
        for _ in range(max_expansions + 1):
            out_hi = probe(program, hi, **solve_kw)
            probes.append((hi, out_hi.optimal))
            if not out_hi.optimal:
                break
            lo, out_lo = hi, out_hi
            hi *= 2.0
        else:
            raise UnboundedGrowth(f"program still feasible at mu = {lo:g}; growth looks unbounded")

    best = out_lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        out = probe(program, mid, **solve_kw)
        probes.append((mid, out.optimal))
        if out.optimal:
            lo, best = mid, out
        else:
            if out.status is lp.Status.NUMERICAL_FAILURE:
                log.info("probe at mu=%.8g: %s", mid, out.message)
            hi = mid
    return HfbaSolution.from_vector(program, lo, best.x, probes)


def solve_scenario(scenario, model=None, **kw) -> HfbaSolution:
    program = HfbaProgram.from_scenario(scenario, model)
    if scenario.no_cross_feed:
        program = apply_no_cross_feed(program)
    return maximize_mu(program, **kw)


# --- variability ---------------------------------------------------------------


@dataclass
class VariabilityEnvelope:
    """Per-bin (min, max) of linear targets at a fixed average growth rate.

    Keys of ``bounds``: ``"n"``, ``"biomass"`` (x_i n_i), ``"growth"``
    (c_i^T w_i) and reaction ids (flux densities w_ir). Entries whose
    sub-problem failed are NaN.
    """

    mu: float
    lengths: np.ndarray
    masses: np.ndarray
    bounds: dict[str, tuple[np.ndarray, np.ndarray]]

    def lower(self, target: str) -> np.ndarray:
        return self.bounds[target][0]

    def upper(self, target: str) -> np.ndarray:
        return self.bounds[target][1]

    def width(self, target: str) -> np.ndarray:
        lo, hi = self.bounds[target]
        return hi - lo

    def total_width(self, target: str) -> float:
        return float(np.nansum(self.width(target)))

    def specific(self, target: str, reference: HfbaSolution):
        """Divide a flux-density envelope by the reference biomass density.

        The result is conditioned on the reference distribution, not a true
        envelope of the nonlinear specific rate.
        """
        lo, hi = self.bounds[target]
        xn = reference.biomass_density
        with np.errstate(divide="ignore", invalid="ignore"):
            occ = reference.occupied
            return np.where(occ, lo / xn, np.nan), np.where(occ, hi / xn, np.nan)

    def contains(self, solution: HfbaSolution, rtol: float = 1e-6) -> bool:
        values = {"n": solution.n, "biomass": solution.biomass_density,
                  "growth": solution.growth_density}
        for key, (lo, hi) in self.bounds.items():
            v = values[key] if key in values else solution.flux_density(key)
            tol = rtol * np.maximum(1.0, np.abs(v))
            ok = np.isnan(lo) | (lo - tol <= v)
            ok &= np.isnan(hi) | (v <= hi + tol)
            if not ok.all():
                return False
        return True


def _target_rows(program: HfbaProgram, target: str) -> sp.csr_matrix:
    N = program.n_bins
    if target == "n":
        return program._place(An=sp.identity(N, format="csr"))
    if target == "growth":
        return program.growth_vars()
    j = program.model.index(target)
    sel = sp.coo_matrix((np.ones(N), (np.arange(N), np.arange(N) * program.n_reactions + j)),
                        shape=(N, N * program.n_reactions))
    return program._place(Aw=sel)


def variability(
    program: HfbaProgram,
    mu: float,
    targets=("n", "growth"),
    reactions=(),
    workers: int | None = None,
    **solve_kw,
) -> VariabilityEnvelope:
    """Minimize and maximize each target per bin subject to all rows at ``mu``."""
    base = assemble(program, mu)
    targets = list(targets) + [r for r in reactions if r not in targets]
    for t in targets:
        if t not in ("n", "growth", "biomass"):
            program.model.index(t)
    jobs = []
    for t in targets:
        if t == "biomass":
            continue  # derived from n
        rows = _target_rows(program, t)
        for i in range(program.n_bins):
            for sense in (lp.MINIMIZE, lp.MAXIMIZE):
                jobs.append((t, i, sense, rows[i]))

    def run(job):
        t, i, sense, obj = job
        out = lp.solve(base.with_objective(obj, sense), **solve_kw)
        if not out.optimal:
            log.info("variability %s[%d] %s: %s", t, i, sense, out.status.value)
            return np.nan
        return out.objective

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            values = list(ex.map(run, jobs))
    else:
        values = [run(j) for j in jobs]

    N = program.n_bins
    bounds: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for (t, i, sense, _), v in zip(jobs, values):
        lo, hi = bounds.setdefault(t, (np.full(N, np.nan), np.full(N, np.nan)))
        (lo if sense == lp.MINIMIZE else hi)[i] = v
    if "n" in bounds:
        x = program.grid.masses
        bounds["biomass"] = (bounds["n"][0] * x, bounds["n"][1] * x)
    return VariabilityEnvelope(float(mu), program.grid.lengths.copy(), program.grid.masses.copy(), bounds)


def random_alternates(
    program: HfbaProgram, mu: float, count: int, seed: int = 0, **solve_kw
) -> list[HfbaSolution]:
    """Alternative optimal solutions from random linear objectives at ``mu``."""
    base = assemble(program, mu)
    rng = np.random.default_rng(seed)
    sols = []
    for _ in range(count):
        obj = rng.standard_normal(program.n_vars)
        out = lp.solve(base.with_objective(obj, lp.MAXIMIZE), **solve_kw)
        if out.optimal:
            sols.append(HfbaSolution.from_vector(program, mu, out.x))
    return sols
