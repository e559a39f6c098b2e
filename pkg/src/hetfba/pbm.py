"""Cell-mass discretization for the population balance.

Unknowns live at bin centers, growth fluxes at bin edges. The grid is uniform
in cell length, and since the mass-length map of a rod-shaped cell is linear,
it is uniform in mass too.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HillParameters:
    """Division rate ``k * L**m / (h**m + L**m)``; k in 1/h, h in um."""

    k: float = 9.3
    h: float = 5.65
    m: float = 12.0


@dataclass(frozen=True)
class Geometry:
    """Cylindrical cell: dry-mass density (pgCDW/um^3) and rod diameter (um)."""

    density: float = 1.105
    diameter: float = 1.0


def mass_from_length(L, geometry: Geometry = Geometry()):
    """Dry mass (pgCDW) of a cylinder of length ``L`` um."""
    L = np.asarray(L, dtype=float)
    if np.any(L < 0):
        raise ValueError("cell length must be non-negative")
    x = geometry.density * np.pi * geometry.diameter**2 / 4.0 * L
    return float(x) if x.ndim == 0 else x


def division_rate(L, hill: HillParameters = HillParameters()):
    L = np.asarray(L, dtype=float)
    if np.any(L < 0):
        raise ValueError("cell length must be non-negative")
    Lm = L**hill.m
    g = hill.k * Lm / (hill.h**hill.m + Lm)
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class MassGrid:
    bin_count: int = 20
    length_max: float = 10.0
    geometry: Geometry = Geometry()
    mass_scale: float = 1.0

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError("need at least two bins")
        if not (self.length_max > 0 and self.mass_scale > 0):
            raise ValueError("length_max and mass_scale must be positive")

    @classmethod
    def from_scenario(cls, scenario) -> "MassGrid":
        return cls(scenario.bin_count, scenario.length_max, scenario.geometry, scenario.mass_scale)

    @cached_property
    def length_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.length_max, self.bin_count + 1)

    @cached_property
    def lengths(self) -> np.ndarray:
        e = self.length_edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def dL(self) -> float:
        return self.length_max / self.bin_count

    @cached_property
    def mass_per_length(self) -> float:
        return mass_from_length(1.0, self.geometry) * self.mass_scale

    @cached_property
    def masses(self) -> np.ndarray:
        """Bin-center masses x_i in scaled mass units."""
        return self.mass_per_length * self.lengths

    @cached_property
    def mass_edges(self) -> np.ndarray:
        return self.mass_per_length * self.length_edges

    @property
    def dx(self) -> float:
        return self.mass_per_length * self.dL

    def __len__(self):
        return self.bin_count


def total_biomass(n, grid: MassGrid) -> float:
    """Discrete biomass functional sum_i x_i n_i dx."""
    return float(np.dot(grid.masses, n) * grid.dx)


def total_cells(n, grid: MassGrid) -> float:
    return float(np.sum(n) * grid.dx)


def build_redistribution(grid: MassGrid) -> np.ndarray:
    """Binary-division redistribution matrix R (daughters in bin i per division in bin j).

    Each mother of mass x_j yields two daughters of mass x_j/2. When the
    half-mass lies between two centers, the two daughters are shared between
    the neighbouring bins so that both the count (2) and the mass (x_j) are
    reproduced exactly. For the first bin the half-mass lies below every
    center; there the same two-moment weights are extrapolated, which puts a
    small negative weight in bin 1.
    """
    N = grid.bin_count
    x = grid.masses
    R = np.zeros((N, N))
    for j in range(N):
        half = 0.5 * x[j]
        # position of the half-mass in units of bins, measured from center 0
        pos = (half - x[0]) / grid.dx
        k = int(np.floor(pos + 1e-12))
        frac = pos - k
        if abs(frac) < 1e-12 or abs(frac - 1) < 1e-12:
            R[int(round(pos)), j] = 2.0
            continue
        if k < 0:
            k = 0
            log.info("half-mass of bin %d lies below the first center; extrapolating weights", j)
        # solve a + b = 2, a x_k + b x_{k+1} = x_j
        b = (x[j] - 2.0 * x[k]) / (x[k + 1] - x[k])
        R[k, j] = 2.0 - b
        R[k + 1, j] = b
    return R


@dataclass(frozen=True)
class DivisionModel:
    grid: MassGrid
    hill: HillParameters
    rates: np.ndarray
    redistribution: np.ndarray

    @classmethod
    def build(cls, grid: MassGrid, hill: HillParameters = HillParameters()) -> "DivisionModel":
        rates = division_rate(grid.lengths, hill)
        R = build_redistribution(grid)
        rates.setflags(write=False)
        R.setflags(write=False)
        return cls(grid, hill, rates, R)

    def operator(self) -> np.ndarray:
        """Net division source ``(R - I) diag(gamma)`` acting on n."""
        return (self.redistribution - np.eye(self.grid.bin_count)) * self.rates[None, :]


def upwind_matrix(bin_count: int, dx: float) -> sp.csr_matrix:
    """Sparse matrix D with (D F)_i approximating dF/dx by first-order upwinding.

    The left inflow is zero and the outflow through the right edge is clamped
    to zero, so the last row only sees the inflow from bin N-2.
    """
    N = bin_count
    diag = np.ones(N) / dx
    diag[-1] = 0.0
    D = sp.diags([diag, -np.ones(N - 1) / dx], [0, -1], shape=(N, N), format="csr")
    D.eliminate_zeros()
    return D


def upwind_advection(F, dx: float) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    out = np.empty_like(F)
    out[0] = F[0] / dx
    out[1:] = (F[1:] - F[:-1]) / dx
    out[-1] = -F[-2] / dx
    return out


def grid_table(division: DivisionModel) -> list[dict]:
    g = division.grid
    return [
        {
            "bin": i,
            "L_left": g.length_edges[i],
            "L": g.lengths[i],
            "L_right": g.length_edges[i + 1],
            "x": g.masses[i],
            "gamma": division.rates[i],
        }
        for i in range(g.bin_count)
    ]


def write_grid_csv(path, division: DivisionModel) -> None:
    rows = grid_table(division)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if k != "bin" else v for k, v in r.items()})
