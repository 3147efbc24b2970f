"""Proper learning of linear dynamical systems via operator moment relaxations.

The pipeline formulates least-squares system identification over
non-commuting operator variables, relaxes it to a hierarchy of
semidefinite programs, solves them with a built-in first-order solver,
and extracts system and forecast estimates from the moments.
"""

from .lds import LdsModel, Trajectory, hazan_model, kalman_filter, nrmse, observability_matrix, simulate
from .ncpoly import Polynomial, Variable, VariableSet, Word
from .npa import (Ncpop, build_relaxation, check_rank_loop, extract_point,
                  monomial_basis, relaxation_to_sdp, write_sdpa)
from .sdp import SdpProblem, SdpSolution, project_psd, read_sdpa, solve
from .sysid import (IdentificationResult, LsFormulationConfig, ar_ols_baseline,
                    build_convergence_formulation, build_general_formulation,
                    build_noise_explicit, identify)

__version__ = "0.1.0"
