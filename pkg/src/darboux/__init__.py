"""Darboux reduction of Poisson structure matrices by matrix congruence.

Given a skew-symmetric structure matrix J(x) satisfying the Jacobi PDEs,
the package searches for a congruence K(x) . J(x) . K(x)^T = S(n, r) built
from elementary row/column transformation pairs, restricts the search to
steps realizable as diffeomorphisms so that K is a Jacobian, recovers the
explicit coordinate change y(x) by quadratures (its trailing components are
a complete set of Casimir invariants), and falls back to factoring out a
time reparametrization when no plain Jacobian congruence exists.  Everything
symbolic is re-checked numerically.
"""

__version__ = "1.0.0"

from .expr import (
    Domain, Expr, ExprError, EvaluationError, SamplerConfig, ZeroVerdict,
    differentiate, evaluate, free_parameters, free_variables,
    integrate_univariate, is_constant, is_nonvanishing, is_zero, parse,
    simplify, substitute, to_text,
)
from .poisson import (
    CanonicalTarget, JacobiReport, RankReport, StructureMatrix,
    canonical_matrix, check_casimir, check_jacobi, check_skew,
    congruence_transform, generic_rank, jacobi_residual, numeric_rank,
    transform_structure,
)
from .congruence import (
    Combine, DarbouxResult, ElementaryTransform, Permute, ReductionTrace,
    Scale, TraceStep, apply_step, casimirs_from, etm_matrix,
    extract_scalar_factor, integrate_jacobian, is_jetm, jacobian_condition,
    jetm_diffeomorphism, reduce_constant, reduce_functional, reparam_validity,
)
from .verify import (
    ConservationReport, Trajectory, VerificationReport, conservation_report,
    simulate, verify_reduction,
)

__all__ = [
    "__version__",
    # expressions
    "Domain", "Expr", "ExprError", "EvaluationError", "SamplerConfig",
    "ZeroVerdict", "differentiate", "evaluate", "free_parameters",
    "free_variables", "integrate_univariate", "is_constant",
    "is_nonvanishing", "is_zero", "parse", "simplify", "substitute",
    "to_text",
    # structure matrices
    "CanonicalTarget", "JacobiReport", "RankReport", "StructureMatrix",
    "canonical_matrix", "check_casimir", "check_jacobi", "check_skew",
    "congruence_transform", "generic_rank", "jacobi_residual",
    "numeric_rank", "transform_structure",
    # congruence reduction
    "Combine", "DarbouxResult", "ElementaryTransform", "Permute",
    "ReductionTrace", "Scale", "TraceStep", "apply_step", "casimirs_from",
    "etm_matrix", "extract_scalar_factor", "integrate_jacobian", "is_jetm",
    "jacobian_condition", "jetm_diffeomorphism", "reduce_constant",
    "reduce_functional", "reparam_validity",
    # verification and simulation
    "ConservationReport", "Trajectory", "VerificationReport",
    "conservation_report", "simulate", "verify_reduction",
]
