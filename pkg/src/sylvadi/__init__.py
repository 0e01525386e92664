"""sylvadi: inexact low-rank ADI solvers for large sparse generalized
Sylvester equations ``A X C + M X B = -f g^T`` with dynamic inner-solve
tolerance control."""

from .adi import (AdiConfig, AdiState, LowRankSolution, SolveReport,
                  StepRecord, Strategy, SylvesterProblem, ToleranceDecision,
                  C_BOUND, adi_step, choose_tolerances, computed_residual_norm,
                  gamma, make_bindings, residual_gap, run, run_with_state,
                  tolB_from_tolA, tolerance_budget, true_residual_norm,
                  verify_factor_identity)
from .krylov import (DirectSolver, InnerSolveRequest, InnerSolveResult,
                     bicgstab, direct_solve, minres)
from .precond import (FactorizationBreakdown, IncompleteFactorization,
                      factorize)
from .problems import (ConvDiffSpec, ProblemSpec, convdiff_matrix,
                       laplacian_eigenvalues, random_rhs)
from .shifts import (RitzSet, ShiftSequence, arnoldi_ritz, heuristic_shifts,
                     pencil_ritz_sets, shift_objective)
from .sparse import (DimensionMismatch, ShiftedOperator, SparseFormatError,
                     SparseMatrix, assemble_shifted, identity,
                     read_dense_array, read_matrix_market, spmv,
                     spmv_transpose, write_dense_array, write_matrix_market)

__version__ = "0.1.0"
