"""Hartree-Fock energies of light atoms in intense magnetic fields on a 2D Chebyshev grid."""

from .grid import DomainSpec, Grid, make_domain
from .scf import EnergyRecord, ScfOptions, run_hf
from .states import Configuration, OrbitalSpec, resolve_state

__all__ = [
    "Configuration",
    "DomainSpec",
    "EnergyRecord",
    "Grid",
    "OrbitalSpec",
    "ScfOptions",
    "make_domain",
    "resolve_state",
    "run_hf",
]
__version__ = "0.1.0"
