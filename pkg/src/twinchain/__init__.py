"""Discrete-event simulator of a primary blockchain governed by a management blockchain."""

from .chain import ChainPair, Configuration, ConfigurationBlock, TransactionBlock, verify_chains
from .kernels import BACKEND
from .scenario import Scenario, load_scenario
from .simulation import RunResult, run_simulation

__version__ = "0.1.0"

__all__ = ["BACKEND", "ChainPair", "Configuration", "ConfigurationBlock", "RunResult", "Scenario",
           "TransactionBlock", "load_scenario", "run_simulation", "verify_chains", "__version__"]
