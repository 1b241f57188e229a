"""Height processes of branching populations with directed interaction."""
from .measures import ExponentialDensity, FiniteAtoms, LevyMeasure, TruncatedStable, ZeroMeasure
from .mechanism import Extinction, InteractionFn, Mechanism, extinction_criterion, localize, phi, psi

__version__ = "0.1.0"

__all__ = [
    "ExponentialDensity", "FiniteAtoms", "LevyMeasure", "TruncatedStable", "ZeroMeasure",
    "Extinction", "InteractionFn", "Mechanism", "extinction_criterion", "localize", "phi", "psi",
]
