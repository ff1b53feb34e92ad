"""Numerical laboratory for the critical Sobolev quotient
S_a(Omega) = inf (int |grad u|^2 + a u^2) / ||u||_{2*}^2 with rough potentials."""

from .bubbles import (BubbleSpec, DeficitFit, bubble_energy, bubble_eval, bubble_mass,
                      deficit_expansion, deficit_expansion_4d, sobolev_constant)
from .grid import (Domain, GridFunction, cg_solve, dirichlet_energy, laplacian_apply, load_grid,
                   lp_norm, store_grid)
from .lorentz import (INFINITY, LorentzExponents, SplitResult, StepProfile, decreasing_rearrangement,
                      distribution_function, grid_lorentz_norm, lorentz_norm, split_domain,
                      weighted_l2_norm)
from .minimize import (ConcentrationDiagnostic, MinimizationReport, MinimizeOptions,
                       brezis_nirenberg_bubble_test, coercivity_constant, concentration_profile,
                       minimize_quotient, quotient_gradient, rayleigh_quotient,
                       select_negativity_center, truncate_potential)
from .potentials import PotentialSpec, Well

__version__ = "0.1.0"
