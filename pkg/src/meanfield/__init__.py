"""Finite-difference solver for mean field games and mean field type control of crowd motion."""

from .coupler import Solution, SolverConfig, solve
from .geometry import CellRole, FaceKind, Grid2D, Topology, face_kind, load_geometry, parse_geometry
from .hamiltonian import (
    ConstantCost,
    LocalHamiltonian,
    NonlocalHamiltonian,
    QuadraticCost,
    pedestrian_hamiltonian,
)
from .hjb import IndependentTerminal, LocalTerminal, Mode

__all__ = [
    "CellRole", "ConstantCost", "FaceKind", "Grid2D", "IndependentTerminal", "LocalHamiltonian",
    "LocalTerminal", "Mode", "NonlocalHamiltonian", "QuadraticCost", "Solution", "SolverConfig",
    "Topology", "face_kind", "load_geometry", "parse_geometry", "pedestrian_hamiltonian", "solve",
]

__version__ = "0.1.0"
