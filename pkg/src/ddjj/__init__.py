"""Driven-dissipative Josephson junction array: mean-field, two-mode and
exact Lindblad solvers plus steady-state sweep tooling."""

from .core import (
    ChemicalPotentialModel,
    CouplingModel,
    LatticeParams,
    chemical_potential_difference,
    effective_coupling,
)

__version__ = "0.1.0"

__all__ = [
    "ChemicalPotentialModel",
    "CouplingModel",
    "LatticeParams",
    "chemical_potential_difference",
    "effective_coupling",
]
