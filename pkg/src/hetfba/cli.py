"""Command-line entry point: ``hetfba {fba,hfba,vary,simulate,check,grid}``.

Every run writes plain CSV files plus a ``manifest.json`` into its output
directory. CSV contents are deterministic for a given scenario and seed; the
timestamp and wall-clock duration live only in the manifest.

Exit codes: 0 ok, 1 usage or I/O error, 2 infeasible (or no optimal
solution), 3 unbounded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import linprog as lp
from .fba import run_fba_scenario
from .hfba import (
    HfbaProgram,
    HfbaSolution,
    apply_no_cross_feed,
    average_fluxes,
    maximize_mu,
    random_alternates,
    variability,
)
from .model_io import (
    ModelParseError,
    ModelValidationError,
    ScenarioError,
    load_scenario,
    resolve_scenario,
    stoichiometric_consistency_report,
)
from .pbm import DivisionModel, MassGrid, write_grid_csv
from .simulate import SimConfig, SimulationError, config_from_solution, run

log = logging.getLogger("hetfba")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_UNBOUNDED = 0, 1, 2, 3
MANIFEST = "manifest.json"
ENVELOPE_REPORT_THRESHOLD = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _f(v) -> str:
    """Shortest round-trip float text; stable across runs."""
    v = float(v)
    return "nan" if np.isnan(v) else repr(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, (str, int)) and not isinstance(x, bool) else _f(x) for x in r])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _load(args):
    scenario = load_scenario(args.scenario)
    if getattr(args, "model", None):
        scenario = replace(scenario, model_path=Path(args.model))
    if not Path(scenario.model_path).exists():
        raise UsageError(f"model file not found: {scenario.model_path}")
    return scenario


def _outdir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, scenario, started: float, outputs, scenario_path, **extra) -> dict:
    data = {
        "tool": "hetfba",
        "version": __version__,
        "command": command,
        "scenario": scenario.name,
        "scenario_path": str(Path(scenario_path).resolve()),
        "scenario_hash": scenario.content_hash(),
        "model_path": str(Path(scenario.model_path).resolve()),
        **extra,
        "duration_s": round(time.perf_counter() - started, 3),
        "outputs": sorted(outputs),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    missing = [o for o in outputs if not (out / o).exists()]
    if missing:
        raise OSError(f"outputs not written: {missing}")
    (out / MANIFEST).write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")
    return data


def _read_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        raise UsageError(f"no manifest in {run_dir}; run `hetfba hfba` first")
    return json.loads(path.read_text())


# --- fba ------------------------------------------------------------------------


def cmd_fba(args) -> int:
    t0 = time.perf_counter()
    scenario = _load(args)
    sol = run_fba_scenario(scenario)
    out = _outdir(args, f"runs/{scenario.name}/fba")
    _write_csv(out / "fluxes.csv", ["reaction", "flux"], zip(sol.reaction_ids, sol.fluxes))
    _manifest(out, "fba", scenario, t0, ["fluxes.csv"], scenario_path=args.scenario_file,
              mode={}, mu=sol.growth)
    print(f"mu = {sol.growth:.6f} 1/h  ({scenario.name}, FBA)")
    return EXIT_OK


# --- hfba -----------------------------------------------------------------------


def _program(scenario, equality=None, no_cross_feed=None, mu_tol=None):
    scenario = replace(
        scenario,
        equality_mode=scenario.equality_mode if equality is None else equality,
        no_cross_feed=scenario.no_cross_feed if no_cross_feed is None else no_cross_feed,
        mu_tolerance=scenario.mu_tolerance if mu_tol is None else mu_tol,
    )
    program = HfbaProgram.from_scenario(scenario)
    if scenario.no_cross_feed:
        program = apply_no_cross_feed(program)
    return scenario, program


def _density_rows(sol: HfbaSolution, env=None):
    g = sol.program.grid
    lo = env.lower("biomass") if env is not None else np.full(g.bin_count, np.nan)
    hi = env.upper("biomass") if env is not None else np.full(g.bin_count, np.nan)
    for i in range(g.bin_count):
        yield (i, g.lengths[i], g.masses[i], sol.n[i], sol.biomass_density[i], lo[i], hi[i],
               sol.specific_growth[i])


def _flux_rows(sol: HfbaSolution):
    g = sol.program.grid
    ids = sol.program.model.reaction_ids
    for i in range(g.bin_count):
        for r, rid in enumerate(ids):
            yield (i, g.lengths[i], rid, sol.w[i, r], sol.specific_fluxes[i, r])


def cmd_hfba(args) -> int:
    t0 = time.perf_counter()
    scenario, program = _program(_load(args), args.equality or None, args.no_cross_feed or None, args.mu_tol)
    sol = maximize_mu(program)
    out = _outdir(args, f"runs/{scenario.name}/hfba-{program.mode}")

    env = None
    if not args.no_envelope:
        env = variability(program, sol.mu, targets=("n",), workers=args.workers)
    _write_csv(out / "density.csv", ["bin", "L", "x", "n", "xn", "xn_min", "xn_max", "mu"],
               _density_rows(sol, env))
    _write_csv(out / "fluxes.csv", ["bin", "L", "reaction", "flux_density", "specific_flux"],
               _flux_rows(sol))
    avg = average_fluxes(sol)
    _write_csv(out / "averages.csv", ["reaction", "average_flux"], zip(program.model.reaction_ids, avg))
    outputs = ["density.csv", "fluxes.csv", "averages.csv"]

    if args.alternates:
        alts = random_alternates(program, sol.mu, args.alternates, seed=args.seed)
        g = program.grid
        _write_csv(out / "alternates.csv", ["sample", "bin", "L", "xn", "mu"],
                   ((k, i, g.lengths[i], a.biomass_density[i], a.specific_growth[i])
                    for k, a in enumerate(alts) for i in range(g.bin_count)))
        outputs.append("alternates.csv")

    _manifest(
        out, "hfba", scenario, t0, outputs, scenario_path=args.scenario_file,
        mode={"equality_mode": scenario.equality_mode, "no_cross_feed": scenario.no_cross_feed,
              "mu_tolerance": scenario.mu_tolerance, "label": program.mode},
        mu=sol.mu, seed=args.seed, probes=len(sol.probes),
    )
    print(f"mu* = {sol.mu:.6f} 1/h  ({scenario.name}, {program.mode}"
          f"{', no cross-feeding' if scenario.no_cross_feed else ''})")
    print(f"biomass-weighted mean growth = {sol.average_growth:.6f} 1/h")
    if env is not None:
        width = env.total_width("biomass") * program.grid.dx
        if width > ENVELOPE_REPORT_THRESHOLD:
            print(f"alternate optima: biomass-density envelope width sum(max-min)*dx = {width:.4g} "
                  f"(B = {program.total_biomass:g}); see xn_min/xn_max in density.csv")
    return EXIT_OK


# --- runs consumed by vary / simulate ---------------------------------------------


def _from_run(run_dir: Path):
    man = _read_manifest(run_dir)
    if man.get("command") != "hfba":
        raise UsageError(f"{run_dir} is not an hfba run")
    scenario = load_scenario(man["scenario_path"] or man["scenario"])
    scenario = replace(scenario, model_path=Path(man["model_path"]))
    mode = man["mode"]
    scenario, program = _program(scenario, mode["equality_mode"], mode["no_cross_feed"], mode["mu_tolerance"])
    if scenario.content_hash() != man["scenario_hash"]:
        raise UsageError("scenario or model changed since the hfba run (hash mismatch)")
    rows = _read_csv(Path(run_dir) / "density.csv")
    n = np.array([float(r["n"]) for r in rows])
    flux = _read_csv(Path(run_dir) / "fluxes.csv")
    w = np.array([float(r["flux_density"]) for r in flux]).reshape(program.n_bins, program.n_reactions)
    sol = HfbaSolution(program, float(man["mu"]), n, w)
    return man, scenario, program, sol


def cmd_vary(args) -> int:
    t0 = time.perf_counter()
    run_dir = Path(args.run)
    man, scenario, program, sol = _from_run(run_dir)
    reactions = list(args.reactions or [])
    if args.all_exchanges:
        reactions += [r for r in program.model.exchange_ids if r not in reactions]
    env = variability(program, sol.mu, targets=("n", "biomass", "growth"), reactions=reactions,
                      workers=args.workers)
    g = program.grid
    ref = {"n": sol.n, "biomass": sol.biomass_density, "growth": sol.growth_density}
    for rid in reactions:
        ref[rid] = sol.flux_density(rid)
    rows = []
    for t in ["n", "biomass", "growth", *reactions]:
        lo, hi = env.lower(t), env.upper(t)
        for i in range(g.bin_count):
            rows.append((t, i, g.lengths[i], lo[i], ref[t][i], hi[i]))
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "envelope.csv", ["target", "bin", "L", "min", "reference", "max"], rows)
    if out == run_dir:
        man.setdefault("outputs", [])
        man["outputs"] = sorted(set(man["outputs"]) | {"envelope.csv"})
        (run_dir / MANIFEST).write_text(json.dumps(man, indent=2) + "\n")
    else:
        _manifest(out, "vary", scenario, t0, ["envelope.csv"], scenario_path=man["scenario_path"],
                  mode=man["mode"], mu=sol.mu, source_run=str(run_dir.resolve()))
    ok = env.contains(sol)
    print(f"envelope at mu = {sol.mu:.6f}: sum biomass width = "
          f"{env.total_width('biomass') * g.dx:.4g}; reference inside: {ok}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    run_dir = Path(args.run)
    man, scenario, program, sol = _from_run(run_dir)
    if not man["mode"]["equality_mode"]:
        log.warning("inequality-mode solution: stationarity is not guaranteed")
    cfg = config_from_solution(sol, doublings=args.doublings, dt=args.dt)
    if args.record_every > 1:
        cfg = SimConfig(cfg.grid, cfg.division, cfg.growth, cfg.initial, cfg.dt, cfg.horizon, args.record_every)
    traj = run(cfg)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    N = program.n_bins
    _write_csv(out / "trajectory.csv", ["t", "B", "cells", *[f"n{i}" for i in range(N)]],
               (((t, B, c, *n)) for t, B, c, n in zip(traj.times, traj.biomass, traj.cells, traj.densities)))
    rate, drift = traj.growth_rate(), traj.drift()
    summary = {"mu": sol.mu, "fitted_rate": rate, "relative_rate_error": abs(rate - sol.mu) / sol.mu,
               "drift": drift, "dt": cfg.dt, "horizon": cfg.horizon, "clipped_mass": traj.clipped_mass}
    (out / "simulation.json").write_text(json.dumps(summary, indent=2) + "\n")
    if out == run_dir:
        man["outputs"] = sorted(set(man.get("outputs", [])) | {"trajectory.csv", "simulation.json"})
        (run_dir / MANIFEST).write_text(json.dumps(man, indent=2) + "\n")
    else:
        _manifest(out, "simulate", scenario, t0, ["trajectory.csv", "simulation.json"],
                  scenario_path=man["scenario_path"], mode=man["mode"], mu=sol.mu,
                  source_run=str(run_dir.resolve()))
    print(f"fitted rate = {rate:.6f} 1/h (mu* = {sol.mu:.6f}); drift = {drift:.3g}")
    return EXIT_OK


# --- utilities --------------------------------------------------------------------


def cmd_check(args) -> int:
    scenario = _load(args)
    model = scenario.load_model()
    print(repr(model))
    report = stoichiometric_consistency_report(model)
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_grid(args) -> int:
    scenario = _load(args)
    grid = MassGrid.from_scenario(scenario)
    division = DivisionModel.build(grid, scenario.hill)
    out = _outdir(args, f"runs/{scenario.name}")
    write_grid_csv(out / "grid.csv", division)
    print(f"wrote {out / 'grid.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hetfba", description="Flux balance analysis over a cell-mass distribution.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(q):
        q.add_argument("--scenario", default="aerobic_unlimited",
                       help="bundled scenario name or path to a TOML file")
        q.add_argument("--model", help="override the scenario's model file")
        q.add_argument("--out", help="output directory")

    q = sub.add_parser("fba", help="standard FBA")
    scenario_args(q)
    q.set_defaults(func=cmd_fba)

    q = sub.add_parser("hfba", help="heterogeneous FBA: maximal average growth rate")
    scenario_args(q)
    q.add_argument("--equality", action="store_true", help="population balance as equality")
    q.add_argument("--no-cross-feed", action="store_true",
                   help="forbid per-bin uptake of exchanges outside the medium")
    q.add_argument("--mu-tol", type=float, help="bisection tolerance on mu (1/h)")
    q.add_argument("--seed", type=int, default=0, help="seed for random alternate optima")
    q.add_argument("--alternates", type=int, default=0, help="number of random alternate optima")
    q.add_argument("--no-envelope", action="store_true", help="skip the density envelope")
    q.add_argument("--workers", type=int, default=None)
    q.set_defaults(func=cmd_hfba)

    q = sub.add_parser("vary", help="variability envelope for a previous hfba run")
    q.add_argument("--run", required=True, help="hfba output directory")
    q.add_argument("--reactions", nargs="*", help="reaction ids to include")
    q.add_argument("--all-exchanges", action="store_true")
    q.add_argument("--workers", type=int, default=None)
    q.add_argument("--out")
    q.set_defaults(func=cmd_vary)

    q = sub.add_parser("simulate", help="forward simulation seeded from an hfba run")
    q.add_argument("--run", required=True, help="hfba output directory")
    q.add_argument("--doublings", type=float, default=3.0)
    q.add_argument("--dt", type=float, default=None)
    q.add_argument("--record-every", type=int, default=1)
    q.add_argument("--out")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("check", help="model consistency report")
    scenario_args(q)
    q.set_defaults(func=cmd_check)

    q = sub.add_parser("grid", help="write the mass grid and division rates")
    scenario_args(q)
    q.set_defaults(func=cmd_grid)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "scenario"):
        try:
            args.scenario_file = str(resolve_scenario(args.scenario))
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if not hasattr(args, "scenario_file"):
        args.scenario_file = None
    try:
        return args.func(args)
    except (UsageError, OSError, ScenarioError, ModelParseError, ModelValidationError, KeyError,
            SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except lp.Unbounded as exc:
        print(f"unbounded: {exc}", file=sys.stderr)
        return EXIT_UNBOUNDED
    except (lp.Infeasible, lp.NumericalFailure) as exc:
        print(f"no optimal solution: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
