"""Lattice laboratory for branching random walks in rough environments.

The package couples three layers that talk to each other through a handful
of shared objects:

* harmonic analysis on a periodic 2-d lattice (Fourier multipliers,
  Littlewood-Paley blocks, paraproducts, weighted Besov norms) together
  with generation and renormalization of a white-noise-like environment,
* deterministic solvers for the discrete heat equation, the Anderson
  equation with potential, its damped variant, and the nonlinear dual
  equation governing Laplace functionals,
* an exact event-driven simulator for the measure-valued branching random
  walk whose offspring law has a stable tail, plus a statistical harness
  that verifies the identities tying the simulator to the solvers.
"""

from .lattice import Grid, Field, make_grid, read_field, write_field
from .besov import WeightSpec, lp_blocks, paraproduct, besov_norm
from .environment import EnvironmentField, sample_environment, compute_I_xi, renormalization_constant
from .offspring import OffspringLaw, SiteMechanism, pgf_coefficients, site_mechanism, mixed_mechanism, auxiliary_mechanism, sample_offspring, pgf_eval
from .solvers import Trajectory, heat_solve, pam_solve, variant_pam_solve, nonlinear_solve, dual_initial, feynman_kac_estimate
from .particles import ParticleState, JumpLedger, init_poisson, advance, pair, support_radius

__all__ = [
    "Grid", "Field", "make_grid", "read_field", "write_field",
    "WeightSpec", "lp_blocks", "paraproduct", "besov_norm",
    "EnvironmentField", "sample_environment", "compute_I_xi", "renormalization_constant",
    "OffspringLaw", "SiteMechanism", "pgf_coefficients", "site_mechanism",
    "mixed_mechanism", "auxiliary_mechanism", "sample_offspring", "pgf_eval",
    "Trajectory", "heat_solve", "pam_solve", "variant_pam_solve",
    "nonlinear_solve", "dual_initial", "feynman_kac_estimate",
    "ParticleState", "JumpLedger", "init_poisson", "advance", "pair", "support_radius",
]
