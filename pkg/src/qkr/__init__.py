"""Numerical laboratory for the finite-dimensional quantum kicked rotor.

Builds the one-period evolution operator of the kicked rotor on an odd
N-point torus, measures quasi-energy and eigenvector statistics across the
crossover from time-reversal invariant (COE-like) to fully broken
time-reversal (CUE-like) behaviour, and provides the analytic and
Monte-Carlo random-matrix reference curves the measurements are compared
against.
"""

__version__ = "0.1.0"

from .model import (
    ModelParams,
    MomentumOperator,
    UnitaryMatrix,
    build_evolution_operator,
    build_evolution_operator_factored,
    build_free,
    build_kick_half,
    build_momentum_operator,
)

__all__ = [
    "ModelParams",
    "MomentumOperator",
    "UnitaryMatrix",
    "build_evolution_operator",
    "build_evolution_operator_factored",
    "build_free",
    "build_kick_half",
    "build_momentum_operator",
    "__version__",
]
