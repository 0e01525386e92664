"""Inexact low-rank ADI iteration for generalized Sylvester equations
``A X C + M X B = -f g^T`` with dynamic inner-solve tolerances.

Each outer step solves the pair of shifted systems ``(A + beta_k M) z_k =
w_{k-1}`` and ``(B + alpha_k C)^* y_k = t_{k-1}`` up to per-step residual
thresholds, accumulates the solution factors ``Z, Gamma, Y`` and the residual
factors ``w, t``, and tracks an upper bound ``u + v`` on the gap between the
computed residual ``w t^*`` and the true Sylvester residual.  The tolerance
strategies keep that gap below a prescribed budget while letting the inner
Krylov solves terminate as early as safely possible.
"""

import json
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import krylov
from .precond import FactorizationBreakdown, factorize
from .sparse import (ShiftedOperator, SparseMatrix, spmv, spmv_transpose,
                     write_dense_array, read_dense_array)

#: Bound on the per-step Cayley constants (normality/field-of-values argument).
C_BOUND = 2.0 + np.sqrt(2.0)


class Strategy(str, Enum):
    FIXED = "fixed"
    DYNAMIC_MID = "dynamic_mid"
    DYNAMIC_MID_BL = "dynamic_mid_bl"
    DYNAMIC_B = "dynamic_b"
    DYNAMIC_B_BL = "dynamic_b_bl"
    EXACT_DIRECT = "exact_direct"
    DIRECT_A_ITER_B = "direct_a_iter_b"
    ITER_A_DIRECT_B = "iter_a_direct_b"


_BL_STRATEGIES = {
    Strategy.DYNAMIC_MID_BL,
    Strategy.DYNAMIC_B_BL,
    Strategy.DIRECT_A_ITER_B,
    Strategy.ITER_A_DIRECT_B,
}


def gamma(alpha, beta):
    """Step coefficient ``-(beta + alpha)``."""
    return -(complex(beta) + complex(alpha))


def block_norm(x):
    """Spectral norm of a thin block."""
    x = np.atleast_2d(x)
    if x.size == 0:
        return 0.0
    return float(np.linalg.svd(x, compute_uv=False)[0])


def computed_residual_norm(w, t):
    """``||w t^*||_2`` via thin QR of both factors."""
    w = np.atleast_2d(w)
    t = np.atleast_2d(t)
    if w.size == 0 or t.size == 0:
        return 0.0
    rw = np.linalg.qr(w, mode="r")
    rt = np.linalg.qr(t, mode="r")
    return float(np.linalg.svd(rw @ rt.conj().T, compute_uv=False)[0])


# -- problem / configuration ------------------------------------------------

@dataclass
class SylvesterProblem:
    """Coefficients of ``A X C + M X B = -f g^T``; ``M``/``C`` may be None
    (identity).  Spectra of (A, M) and (B, C) in the open left half plane are
    the caller's responsibility and are not verified here."""

    A: SparseMatrix
    B: SparseMatrix
    f: np.ndarray
    g: np.ndarray
    M: SparseMatrix = None
    C: SparseMatrix = None

    def __post_init__(self):
        self.f = np.atleast_2d(np.asarray(self.f, dtype=float)
                               if not np.iscomplexobj(self.f) else self.f)
        self.g = np.atleast_2d(np.asarray(self.g, dtype=float)
                               if not np.iscomplexobj(self.g) else self.g)
        if self.f.shape[0] == 1 and self.A.nrows > 1:
            self.f = self.f.T
        if self.g.shape[0] == 1 and self.B.nrows > 1:
            self.g = self.g.T
        if self.A.nrows != self.A.ncols or self.B.nrows != self.B.ncols:
            raise ValueError("A and B must be square")
        if self.M is not None and self.M.shape != self.A.shape:
            raise ValueError("M must match A")
        if self.C is not None and self.C.shape != self.B.shape:
            raise ValueError("C must match B")
        if self.f.shape[0] != self.A.nrows or self.g.shape[0] != self.B.nrows:
            raise ValueError("RHS factor dimensions do not match A, B")
        if self.f.shape[1] != self.g.shape[1]:
            raise ValueError("f and g must have the same number of columns")
        for name, blk in (("f", self.f), ("g", self.g)):
            if blk.shape[1] > 0 and np.linalg.norm(blk) > 0:
                rank = np.linalg.matrix_rank(blk)
                if rank < blk.shape[1]:
                    raise ValueError(f"{name} is column rank deficient")

    @property
    def n(self):
        return self.A.nrows

    @property
    def m(self):
        return self.B.nrows

    @property
    def r(self):
        return self.f.shape[1]

    def rhs_norm(self):
        """``||f g^*||_2``."""
        return computed_residual_norm(self.f, self.g)


@dataclass
class AdiConfig:
    outer_tolerance: float = 1e-8
    kmax: int = 50
    xi: float = 1.0
    strategy: Strategy = Strategy.DYNAMIC_MID_BL
    fixed_delta: float = None          # default outer_tolerance / 20
    delta_min_A: float = None          # default outer_tolerance / 20
    delta_max_A: float = 0.1
    delta_min_B: float = None
    delta_max_B: float = 0.1
    gap_budget: float = None           # default outer_tolerance * ||f g^*||
    max_inner_iterations: int = 1000
    keep_inner_residuals: bool = False
    precond_kind_A: str = "none"
    precond_droptol_A: float = 0.1
    precond_kind_B: str = "none"
    precond_droptol_B: float = 0.1
    a_mode: str = None                 # "direct" / "iterative"; default per strategy
    b_mode: str = None

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if not (0.0 < self.outer_tolerance < 1.0):
            raise ValueError("outer_tolerance must be in (0, 1)")
        if not (0.0 < self.xi <= 1.0):
            raise ValueError("xi must be in (0, 1]")
        if self.kmax < 1:
            raise ValueError("kmax must be >= 1")
        if self.fixed_delta is None:
            self.fixed_delta = self.outer_tolerance / 20.0
        if self.delta_min_A is None:
            self.delta_min_A = self.outer_tolerance / 20.0
        if self.delta_min_B is None:
            self.delta_min_B = self.outer_tolerance / 20.0
        for lo, hi in ((self.delta_min_A, self.delta_max_A),
                       (self.delta_min_B, self.delta_max_B)):
            if not (0.0 < lo <= hi):
                raise ValueError("need 0 < delta_min <= delta_max")

    def side_mode(self, side):
        override = self.a_mode if side == "A" else self.b_mode
        if override is not None:
            return override
        if self.strategy is Strategy.EXACT_DIRECT:
            return "direct"
        if self.strategy is Strategy.DIRECT_A_ITER_B and side == "A":
            return "direct"
        if self.strategy is Strategy.ITER_A_DIRECT_B and side == "B":
            return "direct"
        return "iterative"


@dataclass
class ToleranceDecision:
    delta_A: float
    delta_B: float
    budget: float
    strategy: Strategy
    clamped_A_min: bool = False
    clamped_B_min: bool = False


@dataclass
class StepRecord:
    step: int
    scaled_res: float
    delta_A: float
    delta_B: float
    achieved_rA: float
    achieved_rB: float
    inner_it_A: int
    inner_it_B: int
    u: float
    v: float
    wall_ms: float
    a_converged: bool = True
    b_converged: bool = True
    clamped_A_min: bool = False
    clamped_B_min: bool = False


CSV_HEADER = ("step,scaled_res,delta_A,delta_B,achieved_rA,achieved_rB,"
              "inner_it_A,inner_it_B,u,v,wall_ms")


@dataclass
class SolveReport:
    records: list = field(default_factory=list)
    converged: bool = False
    outer_iterations: int = 0
    final_scaled_residual: float = float("nan")
    rhs_norm: float = 0.0
    wall_ms: float = 0.0
    strategy: Strategy = Strategy.EXACT_DIRECT

    @property
    def sum_inner_A(self):
        return sum(rec.inner_it_A for rec in self.records)

    @property
    def sum_inner_B(self):
        return sum(rec.inner_it_B for rec in self.records)

    def to_rows(self):
        for rec in self.records:
            yield (f"{rec.step},{rec.scaled_res:.16e},{rec.delta_A:.16e},"
                   f"{rec.delta_B:.16e},{rec.achieved_rA:.16e},"
                   f"{rec.achieved_rB:.16e},{rec.inner_it_A},{rec.inner_it_B},"
                   f"{rec.u:.16e},{rec.v:.16e},{rec.wall_ms:.3f}")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in self.to_rows():
                fh.write(row + "\n")


@dataclass
class LowRankSolution:
    """Factors of ``X ~= Z diag(gamma_k I_r) Y^*``."""

    Z: np.ndarray
    gammas: np.ndarray
    Y: np.ndarray
    r: int

    @property
    def steps(self):
        return len(self.gammas)

    @property
    def col_dim(self):
        return self.Z.shape[1]

    def gamma_diag(self):
        """Diagonal of Gamma expanded to block form (length k*r)."""
        return np.repeat(np.asarray(self.gammas, dtype=complex), self.r)

    def dense(self):
        if self.col_dim == 0:
            return np.zeros((self.Z.shape[0], self.Y.shape[0]), dtype=complex)
        return (self.Z * self.gamma_diag()[None, :]) @ self.Y.conj().T

    def save(self, outdir):
        write_dense_array(self.Z, f"{outdir}/Z.mtx")
        write_dense_array(self.gamma_diag().reshape(-1, 1), f"{outdir}/gamma.mtx")
        write_dense_array(self.Y, f"{outdir}/Y.mtx")

    @classmethod
    def load(cls, outdir, r=None):
        Z = read_dense_array(f"{outdir}/Z.mtx")
        gdiag = read_dense_array(f"{outdir}/gamma.mtx").ravel().astype(complex)
        Y = read_dense_array(f"{outdir}/Y.mtx")
        if r is None:
            # block size = run length of the repeated leading gamma value
            r = len(gdiag)
            for i in range(1, len(gdiag)):
                if gdiag[i] != gdiag[0]:
                    r = i
                    break
            r = max(r, 1)
        return cls(Z=Z, gammas=gdiag[::r], Y=Y, r=r)


@dataclass
class AdiState:
    k: int
    Z: np.ndarray
    Y: np.ndarray
    gammas: list
    w: np.ndarray
    t: np.ndarray
    u: float
    v: float
    shift_history: list
    inner_residuals_A: list    # retained blocks S^A (diagnostic mode only)
    inner_residuals_B: list
    keep_inner_residuals: bool

    @classmethod
    def initial(cls, problem, keep_inner_residuals=False):
        n, m, r = problem.n, problem.m, problem.r
        return cls(
            k=0,
            Z=np.zeros((n, 0), dtype=complex),
            Y=np.zeros((m, 0), dtype=complex),
            gammas=[],
            w=problem.f.astype(complex),
            t=problem.g.astype(complex),
            u=0.0,
            v=0.0,
            shift_history=[],
            inner_residuals_A=[],
            inner_residuals_B=[],
            keep_inner_residuals=keep_inner_residuals,
        )

    def solution(self, r):
        return LowRankSolution(Z=self.Z, gammas=np.asarray(self.gammas),
                               Y=self.Y, r=r)

    def S_A(self):
        if not self.keep_inner_residuals:
            raise ValueError("inner residual blocks were not retained")
        return (np.hstack(self.inner_residuals_A) if self.inner_residuals_A
                else np.zeros((self.w.shape[0], 0), dtype=complex))

    def S_B(self):
        if not self.keep_inner_residuals:
            raise ValueError("inner residual blocks were not retained")
        return (np.hstack(self.inner_residuals_B) if self.inner_residuals_B
                else np.zeros((self.t.shape[0], 0), dtype=complex))


# -- tolerance strategies ---------------------------------------------------

def tolerance_budget(config, k, u_prev=0.0, v_prev=0.0, gap_budget=None):
    """Budget for ``psi(||r^A||, ||r^B||)`` at outer step ``k``.

    Non-back-looking strategies spread the gap budget evenly; back-looking
    strategies credit unused allowance from earlier steps through the
    accumulators ``u, v``.
    """
    eps = config.gap_budget if gap_budget is None else gap_budget
    if eps is None:
        raise ValueError("gap budget is not set")
    if config.strategy in _BL_STRATEGIES:
        return (1.0 / C_BOUND) * abs(
            config.xi * k * eps / (2.0 * C_BOUND * config.kmax)
            - u_prev - v_prev)
    return config.xi * eps / (2.0 * C_BOUND**2 * config.kmax)


def tolB_from_tolA(delta_A, eps_check, c_check, norm_t, norm_w):
    """Largest admissible ``||r^B||`` for a given ``||r^A||`` on the boundary
    curve of the admissible region; 0 once the axis intercept is crossed."""
    val = (eps_check - c_check * delta_A * norm_t) / \
          (c_check * (2.0 * delta_A + norm_w))
    return max(val, 0.0)


def choose_tolerances(config, k, norm_w, norm_t, eps_hat):
    """One admissible pair ``(delta_A, delta_B)`` for the given budget."""
    strat = config.strategy
    if strat is Strategy.EXACT_DIRECT:
        return ToleranceDecision(0.0, 0.0, eps_hat, strat)
    if strat is Strategy.FIXED:
        return ToleranceDecision(config.fixed_delta, config.fixed_delta,
                                 eps_hat, strat)
    if strat is Strategy.DIRECT_A_ITER_B:
        raw = eps_hat / max(norm_w, 1e-300)
        dB = min(max(raw, config.delta_min_B), config.delta_max_B)
        return ToleranceDecision(0.0, dB, eps_hat, strat,
                                 clamped_B_min=raw < config.delta_min_B)
    if strat is Strategy.ITER_A_DIRECT_B:
        raw = eps_hat / max(norm_t, 1e-300)
        dA = min(max(raw, config.delta_min_A), config.delta_max_A)
        return ToleranceDecision(dA, 0.0, eps_hat, strat,
                                 clamped_A_min=raw < config.delta_min_A)

    if strat in (Strategy.DYNAMIC_MID, Strategy.DYNAMIC_MID_BL):
        mid = 0.5 * (min(config.delta_max_A, eps_hat / max(norm_t, 1e-300))
                     - config.delta_min_A)
        dA = max(mid, config.delta_min_A)
        clamped_A = mid < config.delta_min_A
        rawB = (eps_hat - dA * norm_t) / (2.0 * dA + norm_w)
        dB = max(min(rawB, config.delta_max_B), config.delta_min_B)
        return ToleranceDecision(dA, dB, eps_hat, strat,
                                 clamped_A_min=clamped_A,
                                 clamped_B_min=rawB < config.delta_min_B)

    # B-preferring: lock delta_B at its floor, take the largest admissible
    # delta_A from the boundary curve
    dB = config.delta_min_B
    rawA = (eps_hat - dB * norm_w) / (norm_t + 2.0 * dB)
    dA = max(min(rawA, config.delta_max_A), config.delta_min_A)
    return ToleranceDecision(dA, dB, eps_hat, strat,
                             clamped_A_min=rawA < config.delta_min_A)


# -- inner solver bindings --------------------------------------------------

def _is_symmetric(matrix, tol=1e-12):
    csr = matrix.scipy()
    diff = (csr - csr.T).tocoo()
    if diff.nnz == 0:
        return True
    scale = max(np.abs(csr.data).max(initial=0.0), 1.0)
    return np.abs(diff.data).max(initial=0.0) <= tol * scale


class SolverBinding:
    """Per-side dispatcher with shift-keyed operator/factorization caches.

    A distinct shift is a cache miss and triggers assembly plus (for the
    iterative mode) a fresh incomplete factorization, so per-step
    refactorization regimes fall out of shift sequences that never repeat.
    Caches may be shared between runs with pinned shifts.
    """

    def __init__(self, side, base, mass, mode, precond_kind="none",
                 droptol=0.1, max_iterations=1000):
        self.side = side
        self.base = base
        self.mass = mass
        self.mode = mode
        self.precond_kind = precond_kind
        self.droptol = droptol
        self.max_iterations = max_iterations
        self.symmetric = _is_symmetric(base) and (mass is None or _is_symmetric(mass))
        self._operators = {}
        self._direct = {}
        self._factorizations = {}

    def operator(self, shift):
        shift = complex(shift)
        op = self._operators.get(shift)
        if op is None:
            op = ShiftedOperator(self.base, self.mass, shift,
                                 adjoint=(self.side == "B"))
            self._operators[shift] = op
        return op

    def _factorization(self, shift, op):
        fact = self._factorizations.get(shift)
        if fact is None:
            try:
                fact = factorize(op.assembled(), self.precond_kind,
                                 droptol=self.droptol, shift=shift)
            except FactorizationBreakdown as exc:
                warnings.warn(
                    f"{self.side}-side {self.precond_kind} factorization broke "
                    f"down at shift {shift} ({exc}); falling back to Jacobi")
                fact = factorize(op.assembled(), "jacobi", shift=shift)
            self._factorizations[shift] = fact
        return fact

    def uses_minres(self, shift):
        return (self.mode == "iterative" and self.symmetric
                and complex(shift).imag == 0.0
                and self.precond_kind in ("none", "jacobi", "ic0", "ict"))

    def solve(self, shift, rhs, delta):
        shift = complex(shift)
        op = self.operator(shift)
        if self.mode == "direct":
            ds = self._direct.get(shift)
            if ds is None:
                ds = krylov.DirectSolver(op)
                self._direct[shift] = ds
            return ds.solve(rhs)
        fact = self._factorization(shift, op)
        req = krylov.InnerSolveRequest(
            operator=op, rhs=rhs, abs_tolerance=delta,
            max_iterations=self.max_iterations, preconditioner=fact)
        if self.uses_minres(shift):
            return krylov.minres(req)
        return krylov.bicgstab(req)


@dataclass
class SolverBindings:
    A: SolverBinding
    B: SolverBinding


def make_bindings(problem, config):
    return SolverBindings(
        A=SolverBinding("A", problem.A, problem.M, config.side_mode("A"),
                        config.precond_kind_A, config.precond_droptol_A,
                        config.max_inner_iterations),
        B=SolverBinding("B", problem.B, problem.C, config.side_mode("B"),
                        config.precond_kind_B, config.precond_droptol_B,
                        config.max_inner_iterations),
    )


# -- the iteration ----------------------------------------------------------

def adi_step(problem, state, pair, decision, bindings):
    """One outer ADI step; mutates ``state`` and returns the two inner results."""
    alpha, beta = complex(pair[0]), complex(pair[1])
    res_a = bindings.A.solve(beta, state.w,
                             decision.delta_A if decision.delta_A > 0 else 1.0)
    res_b = bindings.B.solve(alpha, state.t,
                             decision.delta_B if decision.delta_B > 0 else 1.0)
    z, y = res_a.solution, res_b.solution
    gam = gamma(alpha, beta)

    Mz = z if problem.M is None else spmv(problem.M, z)
    Cty = y if problem.C is None else spmv_transpose(problem.C, y)
    rA = res_a.block_residual_norm
    rB = res_b.block_residual_norm

    state.w = state.w + gam * Mz
    state.t = state.t + np.conj(gam) * Cty
    state.u += abs(gam) * block_norm(Mz) * rB
    state.v += abs(gam) * block_norm(Cty) * rA
    state.Z = np.hstack([state.Z, z])
    state.Y = np.hstack([state.Y, y])
    state.gammas.append(gam)
    state.shift_history.append((alpha, beta))
    if state.keep_inner_residuals:
        state.inner_residuals_A.append(res_a.residual)
        state.inner_residuals_B.append(res_b.residual)
    state.k += 1
    return res_a, res_b


def run(problem, config, shift_sequence, bindings=None):
    """Run the inexact low-rank ADI iteration.

    Iterates until the scaled computed residual ``||w t^*|| / ||f g^*||``
    falls below ``config.outer_tolerance`` or ``kmax`` steps are done.
    Returns ``(LowRankSolution, SolveReport)``; a second return of the final
    :class:`AdiState` is available through ``run_with_state``.
    """
    solution, report, _ = run_with_state(problem, config, shift_sequence,
                                         bindings=bindings)
    return solution, report


def run_with_state(problem, config, shift_sequence, bindings=None):
    t_start = time.perf_counter()
    state = AdiState.initial(problem, config.keep_inner_residuals)
    res0 = problem.rhs_norm()
    report = SolveReport(rhs_norm=res0, strategy=config.strategy)
    if res0 == 0.0:
        report.converged = True
        report.final_scaled_residual = 0.0
        return state.solution(problem.r), report, state

    gap_budget = config.gap_budget
    if gap_budget is None:
        gap_budget = config.outer_tolerance * res0
    if bindings is None:
        bindings = make_bindings(problem, config)

    res = res0
    for k in range(1, config.kmax + 1):
        step_start = time.perf_counter()
        eps_hat = tolerance_budget(config, k, state.u, state.v, gap_budget)
        norm_w = block_norm(state.w)
        norm_t = block_norm(state.t)
        decision = choose_tolerances(config, k, norm_w, norm_t, eps_hat)
        res_a, res_b = adi_step(problem, state, shift_sequence.at(k),
                                decision, bindings)
        res = computed_residual_norm(state.w, state.t)
        wall_ms = 1000.0 * (time.perf_counter() - step_start)
        report.records.append(StepRecord(
            step=k,
            scaled_res=res / res0,
            delta_A=decision.delta_A,
            delta_B=decision.delta_B,
            achieved_rA=res_a.block_residual_norm,
            achieved_rB=res_b.block_residual_norm,
            inner_it_A=res_a.total_iterations,
            inner_it_B=res_b.total_iterations,
            u=state.u,
            v=state.v,
            wall_ms=wall_ms,
            a_converged=bool(np.all(res_a.converged)),
            b_converged=bool(np.all(res_b.converged)),
            clamped_A_min=decision.clamped_A_min,
            clamped_B_min=decision.clamped_B_min,
        ))
        if not (report.records[-1].a_converged and report.records[-1].b_converged):
            warnings.warn(f"inner solver missed its target at step {k}; "
                          "continuing with the achieved residual")
        if res < config.outer_tolerance * res0:
            break

    report.converged = bool(res < config.outer_tolerance * res0)
    report.outer_iterations = state.k
    report.final_scaled_residual = res / res0
    report.wall_ms = 1000.0 * (time.perf_counter() - t_start)
    return state.solution(problem.r), report, state


# -- diagnostics ------------------------------------------------------------

def sigma_alpha_matrix(shift_history, gammas, r):
    """Lower 'staircase' coefficient block matrix of the A-side factor identity."""
    k = len(gammas)
    base = np.zeros((k, k), dtype=complex)
    for l in range(k):
        base[l, l] = shift_history[l][0]          # alpha_l
        base[l, :l] = -gammas[l]
    return np.kron(base, np.eye(r))


def sigma_beta_matrix(shift_history, gammas, r):
    """B-side analogue with conjugated entries."""
    k = len(gammas)
    base = np.zeros((k, k), dtype=complex)
    for l in range(k):
        base[l, l] = np.conj(shift_history[l][1])  # conj(beta_l)
        base[l, :l] = -np.conj(gammas[l])
    return np.kron(base, np.eye(r))


def verify_factor_identity(problem, state):
    """Normalized defect of the two solution-factor identities.

    Checks ``A Z = M Z sigma_alpha + w E^T - S^A`` (and the B-side analogue)
    against the retained inner residual blocks; each defect is normalized by
    ``||A||_F ||Z||_F`` (resp. the B-side counterpart).
    """
    if state.k == 0:
        return 0.0
    S_A, S_B = state.S_A(), state.S_B()
    r = problem.r
    sa = sigma_alpha_matrix(state.shift_history, state.gammas, r)
    sb = sigma_beta_matrix(state.shift_history, state.gammas, r)
    k = state.k

    Z, Y = state.Z, state.Y
    MZ = Z if problem.M is None else spmv(problem.M, Z)
    CtY = Y if problem.C is None else spmv_transpose(problem.C, Y)
    wE = np.tile(state.w, (1, k))
    tE = np.tile(state.t, (1, k))

    defect_a = spmv(problem.A, Z) - MZ @ sa - wE + S_A
    defect_b = spmv_transpose(problem.B, Y) - CtY @ sb - tE + S_B

    a_scale = np.linalg.norm(problem.A.values) * max(np.linalg.norm(Z), 1e-300)
    b_scale = np.linalg.norm(problem.B.values) * max(np.linalg.norm(Y), 1e-300)
    return max(np.linalg.norm(defect_a) / a_scale,
               np.linalg.norm(defect_b) / b_scale)


def residual_gap(problem, state):
    """``||eta^A + eta^B||_2`` from the retained inner residual blocks.

    The gap is evaluated in factored form through thin QR; compare against
    the running estimate ``state.u + state.v``.
    """
    if state.k == 0:
        return 0.0
    S_A, S_B = state.S_A(), state.S_B()
    gdiag = np.repeat(np.asarray(state.gammas, dtype=complex), problem.r)
    MZ = state.Z if problem.M is None else spmv(problem.M, state.Z)
    CtY = state.Y if problem.C is None else spmv_transpose(problem.C, state.Y)
    # eta^A + eta^B = [S^A Gamma, M Z Gamma] [C^T Y, S^B]^*
    left = np.hstack([S_A * gdiag[None, :], MZ * gdiag[None, :]])
    right = np.hstack([CtY, S_B])
    rl = np.linalg.qr(left, mode="r")
    rr = np.linalg.qr(right, mode="r")
    return float(np.linalg.svd(rl @ rr.conj().T, compute_uv=False)[0])


def true_residual_norm(problem, solution, tol=1e-6, max_iterations=200):
    """Spectral norm of the true Sylvester residual by power iteration.

    Works on the implicit operator ``x -> R^*(R x)`` where ``R x = A(Z(Gamma
    (Y^*(C x)))) + M(Z(Gamma(Y^*(B x)))) + f(g^* x)``; the residual matrix is
    never formed.
    """
    A, B, M, C = problem.A, problem.B, problem.M, problem.C
    f = problem.f.astype(complex)
    g = problem.g.astype(complex)
    Z, Y = solution.Z, solution.Y
    gdiag = solution.gamma_diag()

    def apply_R(x):
        Cx = x if C is None else spmv(C, x)
        Bx = x if B is None else spmv(B, x)
        out = f @ (g.conj().T @ x)
        if Z.shape[1]:
            zc = Z @ (gdiag[:, None] * (Y.conj().T @ Cx))
            out = out + spmv(A, zc)
            zb = Z @ (gdiag[:, None] * (Y.conj().T @ Bx))
            out = out + (zb if M is None else spmv(M, zb))
        return out

    def apply_Rh(x):
        out = g @ (f.conj().T @ x)
        if Z.shape[1]:
            za = np.conj(gdiag)[:, None] * (Z.conj().T @ _adjoint_apply(A, x))
            ya = Y @ za
            out = out + (ya if C is None else _adjoint_apply(C, ya))
            zm = np.conj(gdiag)[:, None] * (Z.conj().T @ (x if M is None else _adjoint_apply(M, x)))
            ym = Y @ zm
            out = out + _adjoint_apply(B, ym)
        return out

    x = np.ones((problem.m, 1), dtype=complex)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iterations):
        Rx = apply_R(x)
        y = apply_Rh(Rx)
        lam_new = float(np.linalg.norm(Rx) ** 2)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if lam > 0.0 and abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(lam))


def _adjoint_apply(matrix, x):
    """``matrix^* x`` for a real or complex sparse matrix."""
    if np.iscomplexobj(matrix.values):
        return np.conj(spmv_transpose(matrix, np.conj(x)))
    return spmv_transpose(matrix, x)
