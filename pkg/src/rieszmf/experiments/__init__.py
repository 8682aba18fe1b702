from .config import ConfigError, RegimeSpec
from .regime import GateError, RegimeReport, validate_regime
from .runner import KINDS, run_experiment

__all__ = ["ConfigError", "RegimeSpec", "GateError", "RegimeReport", "validate_regime", "KINDS",
           "run_experiment"]
