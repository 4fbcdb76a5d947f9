"""Laser control of wavepacket dynamics near a conical intersection.

Two-surface split-operator propagation on a 3D grid, a Landau-Zener pathway
model for comparison, and scan drivers that produce plot-ready CSV files.
"""

from conical_ctl.errors import (
    ConfigError,
    ContractViolation,
    DomainError,
    NumericalFailure,
)
from conical_ctl.hamiltonian import FieldSpec, ModelParams
from conical_ctl.lattice import GridSpec, Lattice, WavepacketState, build_lattice

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractViolation",
    "DomainError",
    "NumericalFailure",
    "FieldSpec",
    "ModelParams",
    "GridSpec",
    "Lattice",
    "WavepacketState",
    "build_lattice",
    "__version__",
]
