"""Short-recurrence inner solvers: BiCGstab, MINRES and sparse direct solves.

All solvers work column by column on a block right hand side with the
per-column absolute target ``abs_tolerance / r``.  Convergence is always
judged on the unpreconditioned residual, recomputed explicitly after
termination; BiCGstab is right preconditioned so its recurrence residual is
already the true one, MINRES runs with a split positive definite
preconditioner and verifies the true residual before stopping.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu


@dataclass
class InnerSolveRequest:
    operator: object            # ShiftedOperator (or anything with .apply/.assembled)
    rhs: np.ndarray             # (n, r) block
    abs_tolerance: float
    max_iterations: int = 1000
    preconditioner: object = None   # IncompleteFactorization or None

    def __post_init__(self):
        rhs = np.asarray(self.rhs, dtype=np.complex128)
        if rhs.ndim == 1:
            rhs = rhs.reshape(-1, 1)
        if rhs.shape[0] != self.operator.n:
            raise ValueError("rhs rows do not match operator size")
        self.rhs = rhs
        if self.abs_tolerance <= 0.0:
            raise ValueError("abs_tolerance must be positive")
        if not np.all(np.isfinite(rhs)):
            raise ValueError("rhs contains non-finite entries")

    def operator_size(self):
        return self.operator.n


@dataclass
class InnerSolveResult:
    solution: np.ndarray
    residual: np.ndarray                  # recomputed unpreconditioned residual block
    achieved_residual_norms: np.ndarray   # per-column 2-norms of `residual`
    iterations: np.ndarray
    converged: np.ndarray

    @property
    def total_iterations(self):
        return int(self.iterations.sum())

    @property
    def block_residual_norm(self):
        """Spectral norm of the residual block (thin SVD)."""
        if self.residual.size == 0:
            return 0.0
        return float(np.linalg.svd(self.residual, compute_uv=False)[0])


def _finalize(op, rhs, x, iters, tol_col):
    res = rhs - op.apply(x)
    norms = np.linalg.norm(res, axis=0)
    return InnerSolveResult(
        solution=x,
        residual=res,
        achieved_residual_norms=norms,
        iterations=np.asarray(iters, dtype=np.int64),
        converged=norms <= tol_col,
    )


def _precond_apply(precond, x):
    if precond is None:
        return x.copy()
    return precond.apply(x)


_BREAKDOWN_TINY = 1e-290


def _bicgstab_column(op, M, b, tol, maxit):
    """Right-preconditioned BiCGstab for one column; true-residual recurrence."""
    n = b.shape[0]
    x = np.zeros(n, dtype=np.complex128)
    r = b.copy()
    if np.linalg.norm(r) <= tol:
        return x, 0
    rhat = r.copy()
    rho = alpha = omega = 1.0 + 0.0j
    v = np.zeros(n, dtype=np.complex128)
    p = np.zeros(n, dtype=np.complex128)
    it = 0
    restarted = False
    while it < maxit:
        rho_new = np.vdot(rhat, r)
        scale = np.linalg.norm(rhat) * np.linalg.norm(r)
        if abs(rho_new) <= _BREAKDOWN_TINY * max(scale, 1.0):
            if restarted:
                break
            # restart once from the current iterate with a fresh shadow vector
            rhat = r.copy()
            rho = alpha = omega = 1.0 + 0.0j
            v[:] = 0.0
            p[:] = 0.0
            restarted = True
            continue
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = _precond_apply(M, p[:, None])[:, 0]
        v = op.apply(phat[:, None])[:, 0]
        denom = np.vdot(rhat, v)
        if abs(denom) <= _BREAKDOWN_TINY * max(scale, 1.0):
            if restarted:
                break
            rhat = r.copy()
            rho = alpha = omega = 1.0 + 0.0j
            v[:] = 0.0
            p[:] = 0.0
            restarted = True
            continue
        alpha = rho_new / denom
        s = r - alpha * v
        x += alpha * phat
        it += 1
        if np.linalg.norm(s) <= tol:
            return x, it
        shat = _precond_apply(M, s[:, None])[:, 0]
        t = op.apply(shat[:, None])[:, 0]
        tt = np.vdot(t, t).real
        if tt <= _BREAKDOWN_TINY:
            if restarted:
                break
            rhat = s.copy()
            r = s
            rho = alpha = omega = 1.0 + 0.0j
            v[:] = 0.0
            p[:] = 0.0
            restarted = True
            continue
        omega = np.vdot(t, s) / tt
        if abs(omega) <= _BREAKDOWN_TINY:
            if restarted:
                break
            rhat = s.copy()
            r = s
            rho = alpha = omega = 1.0 + 0.0j
            v[:] = 0.0
            p[:] = 0.0
            restarted = True
            continue
        x += omega * shat
        r = s - omega * t
        rho = rho_new
        if np.linalg.norm(r) <= tol:
            return x, it
    return x, it


def bicgstab(req):
    """Right-preconditioned BiCGstab on every column of the request."""
    op, rhs = req.operator, req.rhs
    r = rhs.shape[1]
    tol_col = req.abs_tolerance / r
    x = np.zeros_like(rhs)
    iters = np.zeros(r, dtype=np.int64)
    for c in range(r):
        xc, it = _bicgstab_column(op, req.preconditioner, rhs[:, c],
                                  tol_col, req.max_iterations)
        # resume if the recurrence residual drifted from the true one
        budget = req.max_iterations - it
        true_res = rhs[:, c] - op.apply(xc[:, None])[:, 0]
        while np.linalg.norm(true_res) > tol_col and budget > 0 and it > 0:
            dx, extra = _bicgstab_column(op, req.preconditioner, true_res,
                                         tol_col, budget)
            if extra == 0:
                break
            xc = xc + dx
            it += extra
            budget -= extra
            true_res = rhs[:, c] - op.apply(xc[:, None])[:, 0]
        x[:, c] = xc
        iters[c] = it
    return _finalize(op, rhs, x, iters, tol_col)


def _minres_column(op, precond, b, tol, maxit):
    """Split-preconditioned MINRES (Paige-Saunders) for one column.

    The recurrence tracks the preconditioned residual norm (monotone); the
    true residual is recomputed whenever the estimate crosses the target and
    iteration continues until the recomputed norm meets ``tol``.
    """
    n = b.shape[0]
    x = np.zeros(n, dtype=np.complex128)
    if np.linalg.norm(b) <= tol:
        return x, 0

    def psolve(v):
        if precond is None:
            return v.copy()
        return precond.apply_spd(v[:, None])[:, 0]

    r1 = b.copy()
    y = psolve(r1)
    beta1_sq = np.vdot(r1, y).real
    if beta1_sq <= 0.0:
        raise RuntimeError("MINRES preconditioner is not positive definite")
    beta1 = np.sqrt(beta1_sq)

    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros(n, dtype=np.complex128)
    w2 = np.zeros(n, dtype=np.complex128)
    r2 = r1.copy()
    # initial estimate of ||r||_2 / ||r||_P used to trigger true-residual checks
    ratio = np.linalg.norm(b) / beta1
    check_at = tol / max(ratio, 1e-300)

    it = 0
    while it < maxit:
        it += 1
        s = 1.0 / beta
        v = s * y
        y = op.apply(v[:, None])[:, 0]
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = np.vdot(v, y).real
        y -= (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = psolve(r2)
        oldb = beta
        beta_sq = np.vdot(r2, y).real
        beta = np.sqrt(max(beta_sq, 0.0))

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), 1e-300)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        if phibar <= check_at:
            res = b - op.apply(x[:, None])[:, 0]
            nr = np.linalg.norm(res)
            if nr <= tol:
                return x, it
            if phibar <= 1e-300:
                break
            check_at = min(check_at, 0.5 * tol * phibar / nr)
        if beta <= 1e-300:
            break
    return x, it


def minres(req):
    """Split-preconditioned MINRES on every column of the request.

    Requires a Hermitian operator and a preconditioner with an SPD split
    form (``none``, ``jacobi`` or the incomplete Cholesky kinds).
    """
    op, rhs = req.operator, req.rhs
    r = rhs.shape[1]
    tol_col = req.abs_tolerance / r
    x = np.zeros_like(rhs)
    iters = np.zeros(r, dtype=np.int64)
    for c in range(r):
        xc, it = _minres_column(op, req.preconditioner, rhs[:, c],
                                tol_col, req.max_iterations)
        x[:, c] = xc
        iters[c] = it
    return _finalize(op, rhs, x, iters, tol_col)


@dataclass
class DirectSolver:
    """Sparse LU (full fill) of an assembled shifted operator."""

    operator: object
    _lu: object = field(default=None, repr=False)

    def __post_init__(self):
        mat = self.operator.assembled().scipy().tocsc().astype(np.complex128)
        self._lu = splu(mat)

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=np.complex128)
        if rhs.ndim == 1:
            rhs = rhs.reshape(-1, 1)
        x = self._lu.solve(rhs)
        return _finalize(self.operator, rhs, x,
                         np.zeros(rhs.shape[1], dtype=np.int64),
                         np.inf)


def direct_solve(operator, rhs):
    """One-shot sparse direct solve; see :class:`DirectSolver` for reuse."""
    return DirectSolver(operator).solve(rhs)
