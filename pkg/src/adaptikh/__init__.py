"""Adaptive Tikhonov regularization in Golub-Kahan Krylov subspaces.

The regularization parameter is updated by one Newton step per bidiagonalization
step, using Gauss and Gauss-Radau quadrature bounds of the parameter-choice
functionals (discrepancy principle, GCV, quasi-optimality, Reginska).
"""

__version__ = "0.1.0"

from .driver import OracleBundle, SolveReport, adaptive_solve, hybrid_solve, rre, svd_oracle
from .gkb import BidiagFactorization, BreakdownSignal, gkb_init, gkb_step, run_gkb
from .problems import (
    LinearOperator,
    MatrixOperator,
    SeparableBlurOperator,
    TestProblem,
    add_noise,
    make_blur_problem,
    make_gravity_problem,
)
from .rules import RuleError, RuleKind, StopRule

__all__ = [
    "BidiagFactorization",
    "BreakdownSignal",
    "LinearOperator",
    "MatrixOperator",
    "OracleBundle",
    "RuleError",
    "RuleKind",
    "SeparableBlurOperator",
    "SolveReport",
    "StopRule",
    "TestProblem",
    "adaptive_solve",
    "add_noise",
    "gkb_init",
    "gkb_step",
    "hybrid_solve",
    "make_blur_problem",
    "make_gravity_problem",
    "rre",
    "run_gkb",
    "svd_oracle",
]
