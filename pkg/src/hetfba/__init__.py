"""Heterogeneous flux balance analysis over a cell-mass population balance."""

__version__ = "0.1.0"

from .fba import FbaSolution, run_fba, run_fva
from .hfba import HfbaProgram, HfbaSolution, maximize_mu, solve_scenario, variability
from .model_io import MetabolicModel, Scenario, load_scenario, parse_model
from .pbm import DivisionModel, MassGrid

__all__ = [
    "DivisionModel",
    "FbaSolution",
    "HfbaProgram",
    "HfbaSolution",
    "MassGrid",
    "MetabolicModel",
    "Scenario",
    "load_scenario",
    "maximize_mu",
    "parse_model",
    "run_fba",
    "run_fva",
    "solve_scenario",
    "variability",
]
