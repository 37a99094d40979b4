"""Cubic splines on spheres: extrinsic system, SO(3) reduction and reconstruction."""

from .extrinsic import (
    ExtrinsicSphereState,
    constraint_residuals,
    crouch_leite_field,
    crouch_leite_vector_field,
    extrinsic_hamiltonian,
    extrinsic_split_vars,
    gauss_frame,
    poisson_lift,
    poisson_project,
    project_state,
    project_to_constraints,
)
from .frames import (
    FrameState,
    ReconstructedTrajectory,
    darboux_state_matrix,
    figure_eight_circle,
    reconstruct_trajectory,
    reconstruction_field,
)
from .reduced import (
    ReducedParams,
    ReducedS2State,
    analytic_equator,
    apply_symmetry,
    fixed_points,
    linearization_eigenvalues,
    momentum_convert,
    momentum_invert,
    reduced_field_cartesian,
    reduced_field_spherical,
    reduced_hamiltonian,
)
from .regularize import integrate_through_rest


__all__ = [
    "ExtrinsicSphereState",
    "FrameState",
    "ReconstructedTrajectory",
    "ReducedParams",
    "ReducedS2State",
    "analytic_equator",
    "apply_symmetry",
    "constraint_residuals",
    "crouch_leite_field",
    "crouch_leite_vector_field",
    "darboux_state_matrix",
    "extrinsic_hamiltonian",
    "extrinsic_split_vars",
    "figure_eight_circle",
    "fixed_points",
    "gauss_frame",
    "integrate_through_rest",
    "linearization_eigenvalues",
    "momentum_convert",
    "momentum_invert",
    "poisson_lift",
    "poisson_project",
    "project_state",
    "project_to_constraints",
    "reconstruct_trajectory",
    "reconstruction_field",
    "reduced_field_cartesian",
    "reduced_field_spherical",
    "reduced_hamiltonian",
]
