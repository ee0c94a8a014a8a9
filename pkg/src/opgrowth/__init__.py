"""Operator growth under noisy scrambling dynamics.

Submodules
----------
pauli
    Pauli strings in symplectic bit form.
sizes
    Operator-size distributions and their moments.
ruc
    Weighted Monte-Carlo trajectories of averaged random circuits.
exact
    Exact Heisenberg-picture evolution in the Pauli basis for small chains.
phenomenology
    Closed-form growth, echo and profile predictions.
protocol
    Randomized-Pauli echo measurement of the size generating function.
experiments, cli
    Named reproduction pipelines and the ``opgrowth`` command.
"""

__version__ = "0.1.0"

from .pauli import PauliString, PhasedString, commutes, multiply, size, size_superop_eigencheck
from .sizes import SizeDistribution, WeightedEnsemble, generating_function, mean_size, normalization, variance
from .ruc import CircuitConfig, Geometry, GrowthCurve, run
from .exact import HamiltonianSpec, LindbladSpec, OperatorState, evolve, otoc_profile
from .phenomenology import PhenomParams, predict_1d, predict_all_to_all, predict_nstar
from .protocol import ProtocolConfig, ProtocolResult, run_protocol
from .fitting import FitResult, fit_growth_constants

__all__ = [
    "__version__",
    "PauliString",
    "PhasedString",
    "commutes",
    "multiply",
    "size",
    "size_superop_eigencheck",
    "SizeDistribution",
    "WeightedEnsemble",
    "generating_function",
    "mean_size",
    "normalization",
    "variance",
    "CircuitConfig",
    "Geometry",
    "GrowthCurve",
    "run",
    "HamiltonianSpec",
    "LindbladSpec",
    "OperatorState",
    "evolve",
    "otoc_profile",
    "PhenomParams",
    "predict_1d",
    "predict_all_to_all",
    "predict_nstar",
    "ProtocolConfig",
    "ProtocolResult",
    "run_protocol",
    "FitResult",
    "fit_growth_constants",
]
