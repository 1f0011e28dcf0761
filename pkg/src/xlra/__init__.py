"""Monte Carlo simulator for grant-based random access in XL-MIMO cells.

Implements the SUCRe-XL baseline and the NOMA-assisted NVR-XL protocol
over a subarrayed uniform rectangular array with Bernoulli visibility
regions, plus the reported performance metrics and experiment tooling.
"""

from .backend import HAVE_EXTENSION, backend_name
from .engine import SweepSpec, TrialConfig, run_sweep, run_trials, tune_delta
from .scenario import ConfigurationError, Scenario, ScenarioConfig, build_scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "HAVE_EXTENSION",
    "Scenario",
    "ScenarioConfig",
    "SweepSpec",
    "TrialConfig",
    "backend_name",
    "build_scenario",
    "run_sweep",
    "run_trials",
    "tune_delta",
    "__version__",
]
