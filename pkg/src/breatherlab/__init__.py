"""Numerical laboratory for breathers in weakly coupled anharmonic chains."""

from .potential import (ActionAngleChart, PotentialSpec, action_of_energy,
                        build_chart, eval_potential, from_cartesian,
                        h0_of_action, nonresonance_margin, omega0, to_cartesian)
from .lattice import (AdmissiblePair, ExponentialWeight, LatticeState,
                      PolynomialWeight, check_skew, distance, hamiltonian,
                      is_admissible, norm, skew_symmetrize, vector_field)
from .integrate import IntegratorConfig, TrajectoryRecord, evolve, flow, step

__all__ = [
    "ActionAngleChart", "PotentialSpec", "action_of_energy", "build_chart",
    "eval_potential", "from_cartesian", "h0_of_action", "nonresonance_margin",
    "omega0", "to_cartesian",
    "AdmissiblePair", "ExponentialWeight", "LatticeState", "PolynomialWeight",
    "check_skew", "distance", "hamiltonian", "is_admissible", "norm",
    "skew_symmetrize", "vector_field",
    "IntegratorConfig", "TrajectoryRecord", "evolve", "flow", "step",
]
