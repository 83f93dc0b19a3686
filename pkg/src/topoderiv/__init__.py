"""Topological derivatives of a tracking cost under coefficient
perturbations of a 2d elliptic operator: closed forms, exterior correctors,
a brute-force difference-quotient oracle, and pointwise optimality audits.
"""

from .mesh import (Mesh, MeshError, PointLocationError, InclusionShape,
                   ball_shape, ellipse_shape, build_rect_mesh,
                   uniform_refine, tag_inclusion, locate_element,
                   rotation_matrix)
from .coeff import (AdmissibilityError, AdmissibilityParams,
                    CoefficientField, PerturbationSpec, as_matrix,
                    isotropic_field, isotropic_values, is_admissible,
                    perturb, sym_min_eig)
from .fem import (AssembledOperators, DEFAULT_RTOL, FemSolution, ProblemSpec,
                  SolverError, assemble, element_gradients, eval_cost,
                  gradient_at, interpolate, l2_error, load_vector,
                  mass_matrix, solve_adjoint, solve_averaged_adjoint,
                  solve_linear, solve_problem, solve_state)
from .topoform import (EllipseRange, Interval, PointData, LAMBDA_GRID,
                       THETA_GRID, delta_j_ball, delta_j_ellipse,
                       delta_j_ellipse_range, delta_j_general,
                       ellipse_sweep, g_range, polarization_delta_j,
                       rotation_range)
from .exterior import (ExteriorConfig, ExteriorSolution, build_exterior_mesh,
                       explicit_G, explicit_interior_gradient,
                       inclusion_gradient_stats, kq_duality_residual,
                       polarization_matrix, sensitivity_matrix, solve_K,
                       solve_Q)
from .oracle import (DescentReport, QuotientStudy, ResolutionError,
                     descent_check, difference_quotient, fit_quotients,
                     expansion_identity_residual, inclusion_mesh_size,
                     quotient_sweep, shape_axis_decomposition)
from .pmp import (Classification, CostModel, CostModelError, PMPReport,
                  default_b_grid, frechet_residual, linear_g_classify,
                  pmp_field_report, pmp_general_residual,
                  pmp_scalar2d_residual, pmp_scalar_residual)

__version__ = "0.1.0"
