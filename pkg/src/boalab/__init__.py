"""Numerical laboratory for adiabatic decoupling and effective Born-Oppenheimer dynamics."""
from .discretization import Grid, MolecularState, NucleonicState, gaussian_packet
from .ensembles import EnsembleSpec
from .model_zoo import BandSelector, ElectronicModel, conical_model, make_avoided_crossing_1d

__all__ = [
    "BandSelector",
    "ElectronicModel",
    "EnsembleSpec",
    "Grid",
    "MolecularState",
    "NucleonicState",
    "conical_model",
    "gaussian_packet",
    "make_avoided_crossing_1d",
]
__version__ = "0.1.0"
