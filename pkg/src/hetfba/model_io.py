"""Model and scenario ingestion.

Metabolic models are read from a subset of the COBRA JSON format; scenarios
are small TOML files describing grid, division, geometry and constraint
overrides for one simulation condition.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .pbm import Geometry, HillParameters

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_MODEL = DATA_DIR / "e_coli_core.json"
SCENARIO_DIR = DATA_DIR / "scenarios"


class ModelParseError(ValueError):
    """The model file is not valid JSON or lacks required fields."""


class ModelValidationError(ValueError):
    """The model parsed, but violates a structural invariant."""


class ScenarioError(ValueError):
    """The scenario file does not conform to the schema."""


@dataclass(frozen=True)
class Metabolite:
    id: str
    name: str
    compartment: str
    extracellular: bool


@dataclass(frozen=True)
class Reaction:
    id: str
    stoichiometry: dict[str, float]
    lower_bound: float
    upper_bound: float
    is_exchange: bool = False
    objective_coefficient: float = 0.0
    name: str = ""


class MetabolicModel:
    """Immutable stoichiometric model with an intracellular/extracellular split.

    Rows of the full matrix ``S`` follow the metabolite order of the file; the
    ``S_X`` and ``S_Y`` blocks select the intracellular and extracellular rows.
    """

    def __init__(self, metabolites, reactions, external_compartment="e", id=""):
        self.id = id
        self.external_compartment = external_compartment
        self.metabolites = tuple(metabolites)
        self.reactions = tuple(reactions)
        self._validate()

        self.metabolite_index = {m.id: i for i, m in enumerate(self.metabolites)}
        self.reaction_index = {r.id: j for j, r in enumerate(self.reactions)}

        rows, cols, vals = [], [], []
        for j, rxn in enumerate(self.reactions):
            for met_id, coef in rxn.stoichiometry.items():
                rows.append(self.metabolite_index[met_id])
                cols.append(j)
                vals.append(float(coef))
        S = sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.metabolites), len(self.reactions))
        )
        S.sum_duplicates()
        S.eliminate_zeros()
        self.S = S
        self.external_rows = np.array(
            [i for i, m in enumerate(self.metabolites) if m.extracellular], dtype=int
        )
        self.internal_rows = np.array(
            [i for i, m in enumerate(self.metabolites) if not m.extracellular], dtype=int
        )
        self.S_X = S[self.internal_rows, :]
        self.S_Y = S[self.external_rows, :]
        self.c = np.array([r.objective_coefficient for r in self.reactions], dtype=float)
        self.lower_bounds = np.array([r.lower_bound for r in self.reactions], dtype=float)
        self.upper_bounds = np.array([r.upper_bound for r in self.reactions], dtype=float)
        for arr in (self.c, self.lower_bounds, self.upper_bounds):
            arr.setflags(write=False)

    def _validate(self):
        seen = set()
        for m in self.metabolites:
            if m.id in seen:
                raise ModelValidationError(f"duplicate metabolite id {m.id!r}")
            seen.add(m.id)
        compartment = {m.id: m.compartment for m in self.metabolites}
        seen_rxn = set()
        for r in self.reactions:
            if r.id in seen_rxn:
                raise ModelValidationError(f"duplicate reaction id {r.id!r}")
            seen_rxn.add(r.id)
            if not r.stoichiometry:
                raise ModelValidationError(f"reaction {r.id!r} has no metabolites")
            if r.lower_bound > r.upper_bound:
                raise ModelValidationError(
                    f"reaction {r.id!r}: lower_bound {r.lower_bound} > upper_bound {r.upper_bound}"
                )
            unknown = [m for m in r.stoichiometry if m not in compartment]
            if unknown:
                raise ModelValidationError(f"reaction {r.id!r} references unknown metabolites {unknown}")
            external = [m for m in r.stoichiometry if compartment[m] == self.external_compartment]
            if external and len(external) == len(r.stoichiometry):
                # boundary reaction: only extracellular species
                if len(external) > 1:
                    raise ModelValidationError(
                        f"exchange reaction {r.id!r} touches {len(external)} extracellular metabolites"
                    )
                if r.stoichiometry[external[0]] >= 0:
                    raise ModelValidationError(
                        f"exchange reaction {r.id!r} must be written as 'met_e ->' (negative coefficient)"
                    )

    @property
    def n_metabolites(self) -> int:
        return len(self.metabolites)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def reaction_ids(self) -> list[str]:
        return [r.id for r in self.reactions]

    @property
    def exchange_ids(self) -> list[str]:
        return [r.id for r in self.reactions if r.is_exchange]

    @property
    def exchange_indices(self) -> np.ndarray:
        return np.array([j for j, r in enumerate(self.reactions) if r.is_exchange], dtype=int)

    @property
    def biomass_reaction(self) -> str:
        nz = np.flatnonzero(self.c)
        if len(nz) != 1:
            raise ModelValidationError("model does not have a single objective reaction")
        return self.reactions[nz[0]].id

    def index(self, reaction_id: str) -> int:
        try:
            return self.reaction_index[reaction_id]
        except KeyError:
            raise KeyError(f"unknown reaction {reaction_id!r}") from None

    def __repr__(self):
        return (
            f"MetabolicModel({self.id!r}, {self.n_metabolites} metabolites, "
            f"{self.n_reactions} reactions, {len(self.exchange_ids)} exchanges)"
        )


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelParseError(f"{what} must be a number, got {value!r}")
    return float(value)


def model_from_dict(data: dict, external_compartment: str = "e") -> MetabolicModel:
    if not isinstance(data, dict):
        raise ModelParseError("model root must be an object")
    try:
        raw_mets = data["metabolites"]
        raw_rxns = data["reactions"]
    except KeyError as exc:
        raise ModelParseError(f"missing top-level array {exc.args[0]!r}") from None

    metabolites = []
    for m in raw_mets:
        try:
            comp = m.get("compartment")
            if comp is None:
                # fall back to the conventional id suffix, e.g. glc__D_e
                comp = m["id"].rsplit("_", 1)[-1]
            metabolites.append(
                Metabolite(m["id"], m.get("name", ""), comp, comp == external_compartment)
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ModelParseError(f"malformed metabolite entry {m!r}") from exc
    comp_of = {m.id: m.compartment for m in metabolites}

    reactions = []
    for r in raw_rxns:
        try:
            rid = r["id"]
            stoich = {str(k): _number(v, f"{rid} coefficient") for k, v in r["metabolites"].items()}
            lb = _number(r.get("lower_bound", 0.0), f"{rid} lower_bound")
            ub = _number(r.get("upper_bound", 1000.0), f"{rid} upper_bound")
            obj = _number(r.get("objective_coefficient", 0.0), f"{rid} objective_coefficient")
        except (KeyError, TypeError, AttributeError) as exc:
            raise ModelParseError(f"malformed reaction entry {r!r}") from exc
        is_exchange = bool(stoich) and all(
            comp_of.get(k) == external_compartment for k in stoich
        )
        reactions.append(Reaction(rid, stoich, lb, ub, is_exchange, obj, r.get("name", "")))

    return MetabolicModel(metabolites, reactions, external_compartment, data.get("id", ""))


def parse_model(path, external_compartment: str = "e") -> MetabolicModel:
    """Read a COBRA-JSON model file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    return model_from_dict(data, external_compartment)


def model_to_dict(model: MetabolicModel) -> dict:
    return {
        "id": model.id,
        "metabolites": [
            {"id": m.id, "name": m.name, "compartment": m.compartment} for m in model.metabolites
        ],
        "reactions": [
            {
                "id": r.id,
                "name": r.name,
                "metabolites": dict(r.stoichiometry),
                "lower_bound": r.lower_bound,
                "upper_bound": r.upper_bound,
                "objective_coefficient": r.objective_coefficient,
            }
            for r in model.reactions
        ],
    }


def write_model(model: MetabolicModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


@dataclass
class ConsistencyReport:
    orphan_metabolites: list[str] = field(default_factory=list)
    empty_reactions: list[str] = field(default_factory=list)
    dead_end_metabolites: list[str] = field(default_factory=list)
    bound_anomalies: list[tuple[str, str]] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.orphan_metabolites or self.empty_reactions or self.bound_anomalies)

    def lines(self) -> list[str]:
        out = [
            f"orphan metabolites: {', '.join(self.orphan_metabolites) or 'none'}",
            f"empty reactions: {', '.join(self.empty_reactions) or 'none'}",
            f"dead-end metabolites: {', '.join(self.dead_end_metabolites) or 'none'}",
        ]
        out += [f"bound anomaly {rid}: {msg}" for rid, msg in self.bound_anomalies]
        return out


def stoichiometric_consistency_report(model: MetabolicModel) -> ConsistencyReport:
    """Informative scan for unused rows, empty columns and odd bounds."""
    S = model.S.tocsc()
    absS = abs(S)
    row_use = np.asarray((absS > 0).sum(axis=1)).ravel()
    col_use = np.asarray((absS > 0).sum(axis=0)).ravel()
    report = ConsistencyReport()
    for i, m in enumerate(model.metabolites):
        if row_use[i] == 0:
            report.orphan_metabolites.append(m.id)
        elif row_use[i] == 1 and not m.extracellular:
            report.dead_end_metabolites.append(m.id)
    for j, r in enumerate(model.reactions):
        if col_use[j] == 0:
            report.empty_reactions.append(r.id)
        lb, ub = r.lower_bound, r.upper_bound
        if math.isinf(lb) or math.isinf(ub):
            report.bound_anomalies.append((r.id, "infinite bound"))
        if lb > 0:
            report.bound_anomalies.append((r.id, f"forced forward flux (lb={lb:g})"))
        if ub < 0:
            report.bound_anomalies.append((r.id, f"forced reverse flux (ub={ub:g})"))
        if lb == ub:
            report.bound_anomalies.append((r.id, f"fixed flux {lb:g}"))
    return report


# --- scenarios ---------------------------------------------------------------

_TOP_KEYS = {"name", "model", "total_biomass", "mass_scale", "external_compartment", "medium"}
_SECTIONS = {"grid", "division", "geometry", "bounds", "totals", "fixed", "flags"}
_SECTION_KEYS = {
    "grid": {"bin_count", "length_max"},
    "division": {"k", "h", "m"},
    "geometry": {"density", "diameter"},
    "flags": {"equality_mode", "no_cross_feed", "mu_tolerance"},
}


@dataclass(frozen=True)
class Scenario:
    """One growth condition: grid, division kinetics, and constraint overrides.

    ``totals`` maps exchange reaction ids to a lower limit on the
    population-summed exchange flux (mmol/h); uptake is negative, so an oxygen
    uptake cap of 12 mmol/h is stored as ``{"EX_o2_e": -12.0}``.
    """

    model_path: Path = DEFAULT_MODEL
    name: str = ""
    bin_count: int = 20
    length_max: float = 10.0
    hill: HillParameters = HillParameters()
    geometry: Geometry = Geometry()
    total_biomass: float = 1.0
    mass_scale: float = 1.0
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    totals: dict[str, float] = field(default_factory=dict)
    fixed: dict[str, float] = field(default_factory=dict)
    medium: tuple[str, ...] | None = None
    equality_mode: bool = False
    no_cross_feed: bool = False
    mu_tolerance: float = 1e-6
    external_compartment: str = "e"

    def __post_init__(self):
        if not isinstance(self.bin_count, int) or self.bin_count < 2:
            raise ScenarioError(f"bin_count must be an integer >= 2, got {self.bin_count!r}")
        for attr in ("length_max", "total_biomass", "mass_scale", "mu_tolerance"):
            if not getattr(self, attr) > 0:
                raise ScenarioError(f"{attr} must be positive, got {getattr(self, attr)!r}")
        if not (self.hill.k >= 0 and self.hill.h > 0 and self.hill.m > 0):
            raise ScenarioError(f"invalid division parameters {self.hill}")
        if not (self.geometry.density > 0 and self.geometry.diameter > 0):
            raise ScenarioError(f"invalid geometry {self.geometry}")
        for rid, (lb, ub) in self.bounds.items():
            if lb > ub:
                raise ScenarioError(f"bounds override {rid}: {lb} > {ub}")

    def content_dict(self) -> dict:
        """Canonical, machine-independent content used for hashing."""
        d = asdict(self)
        d["model_path"] = Path(self.model_path).name
        d["model_sha256"] = _file_sha256(self.model_path)
        d["bounds"] = {k: list(v) for k, v in sorted(self.bounds.items())}
        d["medium"] = None if self.medium is None else list(self.medium)
        return d

    def content_hash(self) -> str:
        blob = json.dumps(self.content_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def load_model(self) -> MetabolicModel:
        return parse_model(self.model_path, self.external_compartment)


def _file_sha256(path) -> str | None:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


def _check_keys(section, table, allowed):
    if not isinstance(table, dict):
        raise ScenarioError(f"[{section}] must be a table")
    extra = set(table) - allowed
    if extra:
        raise ScenarioError(f"unknown key(s) in [{section}]: {sorted(extra)}")


def _real(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{what} must be a number, got {value!r}")
    return float(value)


def scenario_from_dict(data: dict, base_dir: Path | None = None) -> Scenario:
    unknown = set(data) - _TOP_KEYS - _SECTIONS
    if unknown:
        raise ScenarioError(f"unknown top-level key(s): {sorted(unknown)}")
    kw: dict[str, Any] = {}
    if "model" in data:
        p = Path(data["model"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        kw["model_path"] = p
    for key in ("name", "external_compartment"):
        if key in data:
            kw[key] = str(data[key])
    for key in ("total_biomass", "mass_scale"):
        if key in data:
            kw[key] = _real(data[key], key)
    if "medium" in data:
        if not isinstance(data["medium"], list):
            raise ScenarioError("medium must be a list of exchange reaction ids")
        kw["medium"] = tuple(str(m) for m in data["medium"])

    for section, keys in _SECTION_KEYS.items():
        _check_keys(section, data.get(section, {}), keys)

    grid = data.get("grid", {})
    if "bin_count" in grid:
        if isinstance(grid["bin_count"], bool) or not isinstance(grid["bin_count"], int):
            raise ScenarioError(f"bin_count must be an integer, got {grid['bin_count']!r}")
        kw["bin_count"] = grid["bin_count"]
    if "length_max" in grid:
        kw["length_max"] = _real(grid["length_max"], "length_max")
    div = {k: _real(v, k) for k, v in data.get("division", {}).items()}
    kw["hill"] = HillParameters(**div)
    geo = {k: _real(v, k) for k, v in data.get("geometry", {}).items()}
    kw["geometry"] = Geometry(**geo)

    bounds = {}
    for rid, pair in data.get("bounds", {}).items():
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ScenarioError(f"bounds.{rid} must be [lower, upper]")
        bounds[rid] = (_real(pair[0], f"bounds.{rid}"), _real(pair[1], f"bounds.{rid}"))
    kw["bounds"] = bounds
    kw["totals"] = {rid: _real(v, f"totals.{rid}") for rid, v in data.get("totals", {}).items()}
    kw["fixed"] = {rid: _real(v, f"fixed.{rid}") for rid, v in data.get("fixed", {}).items()}

    flags = data.get("flags", {})
    for key in ("equality_mode", "no_cross_feed"):
        if key in flags:
            if not isinstance(flags[key], bool):
                raise ScenarioError(f"flags.{key} must be true/false")
            kw[key] = flags[key]
    if "mu_tolerance" in flags:
        kw["mu_tolerance"] = _real(flags["mu_tolerance"], "mu_tolerance")
    return Scenario(**kw)


def parse_scenario(path) -> Scenario:
    """Read a scenario TOML file; relative model paths resolve against the file."""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    scenario = scenario_from_dict(data, base_dir=path.parent)
    if not scenario.name:
        scenario = replace(scenario, name=path.stem)
    return scenario


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def resolve_scenario(name_or_path) -> Path:
    """Map a bundled scenario name to its file, or pass a path through."""
    p = Path(name_or_path)
    if p.suffix == ".toml" or p.exists():
        return p
    candidate = SCENARIO_DIR / f"{name_or_path}.toml"
    if candidate.exists():
        return candidate
    raise FileNotFoundError(
        f"scenario {name_or_path!r} not found (bundled: {', '.join(bundled_scenarios())})"
    )


def load_scenario(name_or_path) -> Scenario:
    return parse_scenario(resolve_scenario(name_or_path))
