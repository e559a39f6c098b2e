"""Forward simulation of the discretized population balance.

Given per-bin specific growth rates mu_i, the number density evolves as

    dn/dt = -D (mu * x * n) + (R - I) diag(gamma) n

with the same upwind operator D and redistribution matrix R used by the
heterogeneous FBA program. Integration is explicit Euler; a stationary
solution of the program should keep its shape and grow at the average rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .pbm import DivisionModel, MassGrid, upwind_matrix

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SimConfig:
    grid: MassGrid
    division: DivisionModel
    growth: np.ndarray
    initial: np.ndarray
    dt: float
    horizon: float
    record_every: int = 1

    def __post_init__(self):
        N = self.grid.bin_count
        growth = np.asarray(self.growth, float)
        n0 = np.asarray(self.initial, float)
        if growth.shape != (N,) or n0.shape != (N,):
            raise ValueError(f"growth and initial density need shape ({N},)")
        if not (np.all(np.isfinite(growth)) and np.all(np.isfinite(n0))):
            raise ValueError("growth and initial density must be finite")
        if np.any(growth < 0):
            raise ValueError("specific growth rates must be non-negative")
        if np.any(n0 < 0):
            raise ValueError("initial density must be non-negative")
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        cfl = self.dt * np.max(growth * self.grid.masses) / self.grid.dx
        if cfl > 1.0 + 1e-12:
            raise ValueError(f"advective CFL number {cfl:.3g} exceeds 1; reduce dt")
        # outflow by growth and by division together must not empty a bin in one step
        loss = self.dt * np.max(growth * self.grid.masses / self.grid.dx + self.division.rates)
        if loss > 1.0 + 1e-12:
            raise ValueError(f"dt * (growth outflow + division rate) = {loss:.3g} exceeds 1; reduce dt")
        object.__setattr__(self, "growth", growth)
        object.__setattr__(self, "initial", n0)

    @property
    def steps(self) -> int:
        return int(np.ceil(self.horizon / self.dt - 1e-9))


def max_stable_dt(grid: MassGrid, division: DivisionModel, growth) -> float:
    """Largest dt keeping every diagonal entry of the Euler update non-negative."""
    growth = np.asarray(growth, float)
    rate = float(np.max(growth * grid.masses / grid.dx + division.rates))
    return np.inf if rate == 0 else 1.0 / rate


def step(n, config: SimConfig, _ops=None) -> tuple[np.ndarray, float]:
    """One explicit Euler step; returns the new density and the mass removed by clipping."""
    D, K = _ops if _ops is not None else (upwind_matrix(config.grid.bin_count, config.grid.dx),
                                          config.division.operator())
    F = config.growth * config.grid.masses * n
    new = n + config.dt * (-(D @ F) + K @ n)
    neg = new < 0
    clipped = 0.0
    if neg.any():
        clipped = float(-np.dot(config.grid.masses[neg], new[neg]) * config.grid.dx)
        new[neg] = 0.0
    return new, clipped


@dataclass(eq=False)
class Trajectory:
    grid: MassGrid
    times: np.ndarray
    densities: np.ndarray  # (T, N)
    clipped_mass: float = 0.0

    @property
    def biomass(self) -> np.ndarray:
        return self.densities @ self.grid.masses * self.grid.dx

    @property
    def cells(self) -> np.ndarray:
        return self.densities.sum(axis=1) * self.grid.dx

    def normalized(self, k: int) -> np.ndarray:
        """Biomass density x n / B at record ``k``."""
        return self.grid.masses * self.densities[k] / self.biomass[k]

    def _half(self) -> int:
        return int(np.searchsorted(self.times, 0.5 * self.times[-1]))

    def growth_rate(self) -> float:
        """Exponential rate of B(t) fitted by least squares over the final half."""
        k = self._half()
        t, B = self.times[k:], self.biomass[k:]
        if len(t) < 2:
            raise SimulationError("too few records to fit a growth rate")
        slope, _ = np.polyfit(t, np.log(B), 1)
        return float(slope)

    def drift(self) -> float:
        """max |xn/B at T - xn/B at T/2|."""
        return float(np.max(np.abs(self.normalized(-1) - self.normalized(self._half()))))


def run(config: SimConfig) -> Trajectory:
    g = config.grid
    ops = (upwind_matrix(g.bin_count, g.dx), config.division.operator())
    n = config.initial.copy()
    times, states = [0.0], [n.copy()]
    clipped = 0.0
    steps = config.steps
    for k in range(1, steps + 1):
        n, c = step(n, config, ops)
        clipped += c
        if not np.all(np.isfinite(n)):
            raise SimulationError(f"non-finite density at step {k}")
        if k % config.record_every == 0 or k == steps:
            times.append(k * config.dt)
            states.append(n.copy())
    if clipped > 0:
        log.info("negative densities clipped; removed mass %.3g", clipped)
    return Trajectory(g, np.array(times), np.array(states), clipped)


def config_from_solution(solution, doublings: float = 3.0, dt: float | None = None,
                         safety: float = 0.5, bias: float = 0.005) -> SimConfig:
    """Simulation seeded from an hFBA solution.

    Bins below the reporting threshold get zero growth. The default time step
    is the smaller of ``safety`` times the stability limit and ``2*bias/mu``,
    which bounds the first-order Euler bias of the observed growth rate by
    roughly ``bias``.
    """
    program = solution.program
    mu_i = np.nan_to_num(solution.specific_growth, nan=0.0)
    mu_i = np.maximum(mu_i, 0.0)
    mu = solution.mu
    if mu <= 0:
        raise ValueError("need a positive average growth rate")
    if dt is None:
        dt = min(safety * max_stable_dt(program.grid, program.division, mu_i), 2.0 * bias / mu)
    horizon = doublings * np.log(2.0) / mu
    return SimConfig(program.grid, program.division, mu_i, solution.n.copy(), dt, horizon)
