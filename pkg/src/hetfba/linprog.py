"""Backend-neutral linear programs.

``LpProblem`` stores bounds, a sparse row matrix with per-row relations, and
an objective. ``solve`` dispatches to a backend; the shipped backends are the
HiGHS solvers exposed through :func:`scipy.optimize.linprog`. The backend can
be chosen with the ``HETFBA_LP_BACKEND`` environment variable.
"""

from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog as _scipy_linprog

LE, EQ, GE = -1, 0, 1
_REL_CODES = {"<=": LE, "==": EQ, "=": EQ, ">=": GE, LE: LE, EQ: EQ, GE: GE}

MAXIMIZE, MINIMIZE, FEASIBILITY = "maximize", "minimize", "feasibility"

BACKENDS = {"highs": "highs", "highs-ds": "highs-ds", "highs-ipm": "highs-ipm"}
BACKEND_ENV = "HETFBA_LP_BACKEND"


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


class LpError(RuntimeError):
    status = Status.NUMERICAL_FAILURE


class Infeasible(LpError):
    status = Status.INFEASIBLE


class Unbounded(LpError):
    status = Status.UNBOUNDED


class NumericalFailure(LpError):
    status = Status.NUMERICAL_FAILURE


@dataclass(frozen=True)
class LpProblem:
    n_vars: int
    lower: np.ndarray
    upper: np.ndarray
    A: sp.csr_matrix
    relations: np.ndarray
    rhs: np.ndarray
    objective: np.ndarray
    sense: str = FEASIBILITY
    var_names: tuple[str, ...] | None = None
    row_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.A.shape != (len(self.rhs), self.n_vars):
            raise ValueError(f"constraint matrix shape {self.A.shape} does not match rows/vars")
        if len(self.lower) != self.n_vars or len(self.upper) != self.n_vars:
            raise ValueError("bounds length does not match variable count")
        if not np.all(np.isfinite(self.rhs)):
            raise ValueError("right-hand sides must be finite")
        if np.any(self.lower > self.upper):
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise ValueError(f"variable {bad}: lower bound above upper bound")
        if self.sense not in (MAXIMIZE, MINIMIZE, FEASIBILITY):
            raise ValueError(f"unknown sense {self.sense!r}")
        for arr in (self.lower, self.upper, self.relations, self.rhs, self.objective):
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def with_objective(self, objective, sense: str) -> "LpProblem":
        obj = np.zeros(self.n_vars)
        if sp.issparse(objective):
            objective = objective.toarray().ravel()
        obj[:] = objective
        return replace(self, objective=obj, sense=sense)

    def with_rows(self, A, relation, rhs) -> "LpProblem":
        A = sp.csr_matrix(A)
        rel = np.full(A.shape[0], _REL_CODES[relation], dtype=np.int8)
        return replace(
            self,
            A=sp.vstack([self.A, A], format="csr"),
            relations=np.concatenate([self.relations, rel]),
            rhs=np.concatenate([self.rhs, np.broadcast_to(np.asarray(rhs, float), A.shape[0])]),
            row_names=None,
        )

    def with_bounds(self, lower=None, upper=None) -> "LpProblem":
        return replace(
            self,
            lower=self.lower.copy() if lower is None else np.asarray(lower, float),
            upper=self.upper.copy() if upper is None else np.asarray(upper, float),
        )

    def violation(self, x) -> float:
        """Largest scaled violation of rows and bounds at ``x``."""
        x = np.asarray(x, float)
        ax = self.A @ x
        absA = abs(self.A)
        scale = np.maximum(1.0, np.maximum(np.abs(self.rhs), absA @ np.abs(x)))
        resid = ax - self.rhs
        viol = np.where(
            self.relations == LE, np.maximum(resid, 0),
            np.where(self.relations == GE, np.maximum(-resid, 0), np.abs(resid)),
        ) / scale
        bscale = np.maximum(1.0, np.abs(x))
        lo = np.where(np.isfinite(self.lower), np.maximum(self.lower - x, 0), 0) / bscale
        hi = np.where(np.isfinite(self.upper), np.maximum(x - self.upper, 0), 0) / bscale
        parts = [viol.max(initial=0.0), lo.max(initial=0.0), hi.max(initial=0.0)]
        return float(max(parts))


class LpBuilder:
    """Accumulates rows as COO triplets and freezes them into an LpProblem."""

    def __init__(self, n_vars: int, lower=0.0, upper=np.inf, var_names=None):
        self.n_vars = n_vars
        self.lower = np.broadcast_to(np.asarray(lower, float), n_vars).copy()
        self.upper = np.broadcast_to(np.asarray(upper, float), n_vars).copy()
        self.var_names = var_names
        self._blocks: list[sp.coo_matrix] = []
        self._rel: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._names: list[str] = []
        self.objective = np.zeros(n_vars)
        self.sense = FEASIBILITY

    @property
    def n_rows(self) -> int:
        return sum(len(r) for r in self._rhs)

    def add_row(self, cols, vals, relation, rhs, name: str = "") -> int:
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        vals = np.broadcast_to(np.asarray(vals, float), cols.shape)
        m = sp.coo_matrix((vals, (np.zeros_like(cols), cols)), shape=(1, self.n_vars))
        return self.add_rows(m, relation, rhs, [name])

    def add_rows(self, A, relation, rhs, names=None) -> int:
        """Append all rows of ``A`` with a common relation; returns first row index."""
        A = sp.coo_matrix(A)
        if A.shape[1] != self.n_vars:
            raise ValueError(f"row block has {A.shape[1]} columns, expected {self.n_vars}")
        first = self.n_rows
        if A.shape[0] == 0:
            return first
        self._blocks.append(A)
        self._rel.append(np.full(A.shape[0], _REL_CODES[relation], dtype=np.int8))
        self._rhs.append(np.broadcast_to(np.asarray(rhs, float), A.shape[0]).copy())
        if names is None:
            names = [""] * A.shape[0]
        self._names.extend(names)
        return first

    def set_objective(self, coefs, sense: str) -> None:
        self.objective = np.asarray(coefs, float).copy()
        self.sense = sense

    def build(self) -> LpProblem:
        if self._blocks:
            A = sp.vstack(self._blocks, format="csr")
            rel = np.concatenate(self._rel)
            rhs = np.concatenate(self._rhs)
        else:
            A = sp.csr_matrix((0, self.n_vars))
            rel = np.zeros(0, dtype=np.int8)
            rhs = np.zeros(0)
        return LpProblem(
            self.n_vars,
            self.lower.copy(),
            self.upper.copy(),
            A,
            rel,
            rhs,
            self.objective.copy(),
            self.sense,
            tuple(self.var_names) if self.var_names is not None else None,
            tuple(self._names) if any(self._names) else None,
        )


@dataclass(frozen=True)
class LpOutcome:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    message: str = ""
    violation: float | None = field(default=None, compare=False)
    margin: float | None = field(default=None, compare=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def raise_for_status(self) -> "LpOutcome":
        if self.status is Status.INFEASIBLE:
            raise Infeasible(self.message or "problem is infeasible")
        if self.status is Status.UNBOUNDED:
            raise Unbounded(self.message or "problem is unbounded")
        if self.status is Status.NUMERICAL_FAILURE:
            raise NumericalFailure(self.message or "solver reported a numerical failure")
        return self


def default_backend() -> str:
    name = os.environ.get(BACKEND_ENV, "highs")
    if name not in BACKENDS:
        raise ValueError(f"unknown LP backend {name!r}; choose from {sorted(BACKENDS)}")
    return name


def solve(
    problem: LpProblem,
    feasibility_tol: float = 1e-9,
    optimality_tol: float = 1e-9,
    backend: str | None = None,
) -> LpOutcome:
    """Solve ``problem``; a returned optimum never violates rows by more than
    ``1e3 * feasibility_tol`` relative to row magnitude."""
    backend = backend or default_backend()
    method = BACKENDS[backend]

    le = problem.relations == LE
    ge = problem.relations == GE
    eq = problem.relations == EQ
    A = problem.A
    A_ub = sp.vstack([A[le], -A[ge]], format="csr")
    b_ub = np.concatenate([problem.rhs[le], -problem.rhs[ge]])
    A_eq = A[eq]
    b_eq = problem.rhs[eq]

    if problem.sense == MAXIMIZE:
        c = -problem.objective
    elif problem.sense == MINIMIZE:
        c = problem.objective
    else:
        c = np.zeros(problem.n_vars)

    options = {
        "primal_feasibility_tolerance": feasibility_tol,
        "dual_feasibility_tolerance": optimality_tol,
    }
    if method == "highs-ipm":
        options = {"primal_feasibility_tolerance": feasibility_tol}
    res = _scipy_linprog(
        c,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A_eq if A_eq.shape[0] else None,
        b_eq=b_eq if A_eq.shape[0] else None,
        bounds=np.column_stack([problem.lower, problem.upper]),
        method=method,
        options=options,
    )
    if res.status == 2:
        return LpOutcome(Status.INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpOutcome(Status.UNBOUNDED, message=res.message)
    if res.status != 0 or res.x is None:
        return LpOutcome(Status.NUMERICAL_FAILURE, message=res.message)

    x = np.asarray(res.x, float)
    viol = problem.violation(x)
    if viol > 1e3 * feasibility_tol:
        return LpOutcome(
            Status.NUMERICAL_FAILURE,
            message=f"solution violates constraints by {viol:.3g} (relative)",
            violation=viol,
        )
    obj = float(problem.objective @ x) if problem.sense != FEASIBILITY else 0.0
    return LpOutcome(Status.OPTIMAL, x, obj, res.message, viol)


def elastic(problem: LpProblem, rows, weights=None) -> tuple[LpProblem, int]:
    """Phase-one relaxation: nonnegative slacks on ``rows``, weighted sum minimized.

    Inequality rows get one slack, equality rows two. Returns the relaxed
    problem and the number of original variables (which come first).
    """
    rows = np.asarray(rows, dtype=int)
    weights = np.ones(len(rows)) if weights is None else np.asarray(weights, float)
    ri, ci, vals, cost = [], [], [], []
    k = 0
    for row, wt in zip(rows, weights):
        rel = problem.relations[row]
        signs = (-1.0,) if rel == LE else (1.0,) if rel == GE else (1.0, -1.0)
        for sgn in signs:
            ri.append(row)
            ci.append(k)
            vals.append(sgn)
            cost.append(wt)
            k += 1
    S = sp.csr_matrix((vals, (ri, ci)), shape=(problem.n_rows, k))
    relaxed = LpProblem(
        problem.n_vars + k,
        np.concatenate([problem.lower, np.zeros(k)]),
        np.concatenate([problem.upper, np.full(k, np.inf)]),
        sp.hstack([problem.A, S], format="csr"),
        problem.relations.copy(),
        problem.rhs.copy(),
        np.concatenate([np.zeros(problem.n_vars), cost]),
        MINIMIZE,
    )
    return relaxed, problem.n_vars


def solve_feasibility(
    problem: LpProblem, rows, weights=None, margin_tol: float = 1e-10, **solve_kw
) -> LpOutcome:
    """Decide feasibility through the elastic relaxation of ``rows``.

    Proving infeasibility directly is numerically fragile for badly scaled
    programs; the relaxation is always an optimization with a finite optimum,
    and the original problem counts as feasible when the weighted slack is at
    most ``margin_tol``. The returned point covers the original variables.
    """
    relaxed, n = elastic(problem, rows, weights)
    out = solve(relaxed, **solve_kw)
    if not out.optimal:
        return out
    margin = max(out.objective, 0.0)
    if margin > margin_tol:
        return LpOutcome(Status.INFEASIBLE, message=f"elastic margin {margin:.3g}", margin=margin)
    x = out.x[:n]
    return LpOutcome(Status.OPTIMAL, x, 0.0, out.message, problem.violation(x), margin)


def _fmt(v: float) -> str:
    return repr(float(v))


def to_lp_format(problem: LpProblem) -> str:
    """Render the problem in CPLEX LP text format."""
    names = problem.var_names or tuple(f"x{j}" for j in range(problem.n_vars))
    names = [n.replace(" ", "_") for n in names]
    out = io.StringIO()

    def terms(idx, vals):
        parts = []
        for j, v in zip(idx, vals):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_fmt(abs(v))} {names[j]}")
        return " ".join(parts) if parts else "0 " + names[0]

    sense = "Maximize" if problem.sense == MAXIMIZE else "Minimize"
    nz = np.flatnonzero(problem.objective)
    out.write(f"{sense}\n obj: {terms(nz, problem.objective[nz])}\nSubject To\n")
    A = problem.A.tocsr()
    sym = {LE: "<=", EQ: "=", GE: ">="}
    for i in range(problem.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        label = (problem.row_names[i] if problem.row_names and problem.row_names[i] else f"r{i}")
        out.write(
            f" {label.replace(' ', '_')}: {terms(A.indices[lo:hi], A.data[lo:hi])} "
            f"{sym[int(problem.relations[i])]} {_fmt(problem.rhs[i])}\n"
        )
    out.write("Bounds\n")
    for j in range(problem.n_vars):
        lo, hi = problem.lower[j], problem.upper[j]
        if np.isneginf(lo) and np.isposinf(hi):
            out.write(f" {names[j]} free\n")
        else:
            lo_s = "-inf" if np.isneginf(lo) else _fmt(lo)
            hi_s = "+inf" if np.isposinf(hi) else _fmt(hi)
            out.write(f" {lo_s} <= {names[j]} <= {hi_s}\n")
    out.write("End\n")
    return out.getvalue()


def write_lp(problem: LpProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_lp_format(problem))
