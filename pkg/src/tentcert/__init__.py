"""Log-concave maximum likelihood tent functions, certified.

Estimation of the log-concave MLE for weighted point configurations in
dimension 1 and 2, and alpha-theory certification of candidate critical
points of the induced polynomial-exponential systems.
"""

from .geometry import (
    HeightVector,
    PointConfig,
    Simplex,
    Subdivision,
    Triangulation,
    induced_subdivision,
    refine_to_triangulation,
    simplex_volumes,
    tent_eval,
)
from .objective import (
    ReducedChart,
    divided_diff_exp,
    eval_S,
    grad_S,
    integral_exp_tent,
    reduce_objective,
)
from .scorematrix import build_A, det_A_exact, residual
from .polysys import (
    PolyExpSystem,
    SparsePoly,
    TermBudgetExceeded,
    bombieri_norm,
    build_reduced_system,
    build_system,
)
from .alphacert import (
    Certificate,
    CertificationError,
    alpha_threshold,
    beta,
    certify,
    gamma_bound,
    mu,
    newton_iterate,
)
from .lambert import (
    BranchError,
    generalized_lambert,
    one_cell_heights,
    r_lambert,
    two_cell_reduced_residual,
)
from .refine import (
    RefineResult,
    candidate_systems,
    digit_refine,
)
from .solver import SolveResult, SolveSettings, maximize, polish

__version__ = "0.1.0"

__all__ = [
    "HeightVector", "PointConfig", "Simplex", "Subdivision", "Triangulation",
    "induced_subdivision", "refine_to_triangulation", "simplex_volumes",
    "tent_eval", "ReducedChart", "divided_diff_exp", "eval_S", "grad_S",
    "integral_exp_tent", "reduce_objective", "build_A", "det_A_exact",
    "residual", "PolyExpSystem", "SparsePoly", "TermBudgetExceeded",
    "bombieri_norm", "build_reduced_system", "build_system", "Certificate",
    "CertificationError", "alpha_threshold", "beta", "certify", "gamma_bound",
    "mu", "newton_iterate", "BranchError", "generalized_lambert",
    "one_cell_heights", "r_lambert", "two_cell_reduced_residual",
    "RefineResult", "candidate_systems", "digit_refine", "SolveResult",
    "SolveSettings", "maximize", "polish",
]
