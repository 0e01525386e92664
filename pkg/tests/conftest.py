"""Shared helpers: dense oracles and random problem generators."""

import numpy as np
import pytest

from sylvadi import SparseMatrix, SylvesterProblem


def dense_triple_loop_matmul(dense, x):
    """Literal triple-loop matrix-block product, independent of any kernel."""
    n, p = dense.shape
    x = np.atleast_2d(x)
    out = np.zeros((n, x.shape[1]), dtype=np.result_type(dense, x))
    for i in range(n):
        for j in range(p):
            for col in range(x.shape[1]):
                out[i, col] += dense[i, j] * x[j, col]
    return out


def random_sparse(rng, nrows, ncols, density=0.3):
    dense = rng.standard_normal((nrows, ncols))
    dense[rng.random((nrows, ncols)) > density] = 0.0
    return SparseMatrix(dense), dense


def random_stable_dense(rng, n, margin=0.5):
    """Random dense matrix with spectrum shifted into the open left half plane."""
    raw = rng.standard_normal((n, n)) / np.sqrt(n)
    lam = np.linalg.eigvals(raw)
    return raw - (lam.real.max() + margin) * np.eye(n)


def random_symmetric_negdef(rng, n, spread=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    d = -(1.0 + spread * rng.random(n))
    return (q * d) @ q.T


def kron_solve(Ad, Bd, f, g, Md=None, Cd=None):
    """Dense Kronecker-system oracle for A X C + M X B = -f g^T."""
    n, m = Ad.shape[0], Bd.shape[0]
    Md = np.eye(n) if Md is None else Md
    Cd = np.eye(m) if Cd is None else Cd
    K = np.kron(Cd.T, Ad) + np.kron(Bd.T, Md)
    x = np.linalg.solve(K, -(f @ g.T).ravel(order="F"))
    return x.reshape((n, m), order="F")


def dense_problem(rng, n, m, r, symmetric=False):
    if symmetric:
        Ad = random_symmetric_negdef(rng, n)
        Bd = random_symmetric_negdef(rng, m)
    else:
        Ad = random_stable_dense(rng, n)
        Bd = random_stable_dense(rng, m)
    f = rng.standard_normal((n, r))
    g = rng.standard_normal((m, r))
    problem = SylvesterProblem(A=SparseMatrix(Ad), B=SparseMatrix(Bd), f=f, g=g)
    return problem, Ad, Bd


def dense_residual(problem, X):
    Ad = problem.A.toarray()
    Bd = problem.B.toarray()
    Md = np.eye(problem.n) if problem.M is None else problem.M.toarray()
    Cd = np.eye(problem.m) if problem.C is None else problem.C.toarray()
    return Ad @ X @ Cd + Md @ X @ Bd + problem.f @ problem.g.T


def real_shift_pairs(Ad, Bd, npairs=40):
    """Deterministic real shift pairs from the dense spectra (oracle-side
    shift generation that avoids the heuristic under test)."""
    la = np.linalg.eigvals(Ad).real
    lb = np.linalg.eigvals(Bd).real
    alphas = np.geomspace(-la.min(), -la.max(), npairs) * -1.0
    betas = np.geomspace(-lb.min(), -lb.max(), npairs) * -1.0
    return [(complex(a), complex(b)) for a, b in zip(alphas, betas)]


def prefix_state(problem, state, k):
    """Reconstruct the ADI state as it was after step ``k`` from the full
    run's factor and residual-block history (w_k = f + M Z_k Gamma_k 1)."""
    from sylvadi.adi import AdiState
    from sylvadi.sparse import spmv, spmv_transpose

    r = problem.r
    sub = AdiState.initial(problem, keep_inner_residuals=state.keep_inner_residuals)
    sub.k = k
    sub.Z = state.Z[:, :k * r]
    sub.Y = state.Y[:, :k * r]
    sub.gammas = list(state.gammas[:k])
    sub.shift_history = list(state.shift_history[:k])
    if state.keep_inner_residuals:
        sub.inner_residuals_A = list(state.inner_residuals_A[:k])
        sub.inner_residuals_B = list(state.inner_residuals_B[:k])
    gd = np.repeat(np.asarray(sub.gammas, dtype=complex), r)
    MZ = sub.Z if problem.M is None else spmv(problem.M, sub.Z)
    CtY = sub.Y if problem.C is None else spmv_transpose(problem.C, sub.Y)
    ones = np.kron(np.ones((k, 1)), np.eye(r))
    sub.w = problem.f.astype(complex) + (MZ * gd[None, :]) @ ones
    sub.t = problem.g.astype(complex) + (CtY * np.conj(gd)[None, :]) @ ones
    return sub


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)
