"""Ensemble Langevin simulator for a driven, damped two-level system.

Subpackages follow the pipeline: :mod:`model` (equations), :mod:`analytic`
(closed-form references), :mod:`stochastic` (single trajectories),
:mod:`ensemble` (moments and thermodynamics), :mod:`spectral` (driven
steady state and resonance scans) and :mod:`io` / :mod:`cli` (configuration,
persistence and the command line).
"""

from importlib.metadata import PackageNotFoundError, version

from .model import BlochVector, SystemParams, TlsState
from .stochastic import IntegratorConfig, NoiseConfig
from .ensemble import EnsembleConfig, MomentSeries, run_ensemble
from .results import ScanResult

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "BlochVector",
    "EnsembleConfig",
    "IntegratorConfig",
    "MomentSeries",
    "NoiseConfig",
    "ScanResult",
    "SystemParams",
    "TlsState",
    "run_ensemble",
    "__version__",
]
