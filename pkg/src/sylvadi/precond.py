"""Incomplete factorization preconditioners for the shifted inner systems.

Supported kinds: ``ilu0``, ``ilut`` (threshold dropping), ``ic0``, ``ict``,
``jacobi`` and ``none``.  Factorizations are applied as right (BiCGstab) or
split (MINRES) preconditioners.  The threshold rule drops entries whose
modulus falls below ``droptol`` times the 2-norm of the original matrix row.
"""

import numpy as np
import scipy.sparse as sp
from numba import njit

from .sparse import SparseMatrix

KINDS = ("none", "jacobi", "ilu0", "ilut", "ic0", "ict")

_PIVOT_TINY = 1e-300


class FactorizationBreakdown(RuntimeError):
    """Zero or near-zero pivot during incomplete factorization."""


@njit(cache=True)
def _grow(arr, need):
    if need <= arr.size:
        return arr
    out = np.empty(max(need, 2 * arr.size), dtype=arr.dtype)
    out[: arr.size] = arr
    return out


@njit(cache=True)
def _ilu_kernel(n, indptr, indices, data, droptol, restrict_pattern):
    """Row-wise (IKJ) incomplete LU with threshold dropping.

    Returns CSR arrays of unit-lower L (diagonal not stored) and upper U
    (diagonal first in each row), plus a status flag (0 ok, 1 zero pivot).
    L/U fill is unrestricted for the threshold variants and limited to the
    input pattern for the level-0 variants (``restrict_pattern``).
    """
    w = np.zeros(n, dtype=np.complex128)
    occupied = np.zeros(n, dtype=np.bool_)
    in_pattern = np.zeros(n, dtype=np.bool_)
    udiag = np.zeros(n, dtype=np.complex128)

    cap = 4 * (indices.size + n)
    l_indptr = np.zeros(n + 1, dtype=np.int64)
    l_indices = np.empty(cap, dtype=np.int64)
    l_data = np.empty(cap, dtype=np.complex128)
    u_indptr = np.zeros(n + 1, dtype=np.int64)
    u_indices = np.empty(cap, dtype=np.int64)
    u_data = np.empty(cap, dtype=np.complex128)
    lnnz = 0
    unnz = 0

    for i in range(n):
        # scatter row i and compute its drop threshold
        rownorm = 0.0
        first = n
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            w[j] = v
            occupied[j] = True
            in_pattern[j] = True
            rownorm += (v.real * v.real + v.imag * v.imag)
            if j < first:
                first = j
        tau = droptol * np.sqrt(rownorm)

        for k in range(first, i):
            if not occupied[k]:
                continue
            lik = w[k] / udiag[k]
            if (not restrict_pattern) and abs(lik) < tau:
                w[k] = 0.0
                occupied[k] = False
                continue
            w[k] = lik
            # eliminate with row k of U (skip its diagonal entry)
            for p in range(u_indptr[k] + 1, u_indptr[k + 1]):
                j = u_indices[p]
                if restrict_pattern and not in_pattern[j]:
                    continue
                w[j] -= lik * u_data[p]
                occupied[j] = True

        piv = w[i]
        if abs(piv) < _PIVOT_TINY:
            return (l_indptr, l_indices[:lnnz], l_data[:lnnz],
                    u_indptr, u_indices[:unnz], u_data[:unnz], 1)
        udiag[i] = piv

        l_indices = _grow(l_indices, lnnz + i)
        l_data = _grow(l_data, lnnz + i)
        u_indices = _grow(u_indices, unnz + n - i)
        u_data = _grow(u_data, unnz + n - i)

        for j in range(first, i):
            if occupied[j]:
                l_indices[lnnz] = j
                l_data[lnnz] = w[j]
                lnnz += 1
        l_indptr[i + 1] = lnnz

        u_indices[unnz] = i
        u_data[unnz] = piv
        unnz += 1
        for j in range(i + 1, n):
            if occupied[j]:
                if restrict_pattern or abs(w[j]) >= tau:
                    u_indices[unnz] = j
                    u_data[unnz] = w[j]
                    unnz += 1
        u_indptr[i + 1] = unnz

        # reset work arrays for the next row
        for j in range(first, n):
            w[j] = 0.0
            occupied[j] = False
            in_pattern[j] = False

    return (l_indptr, l_indices[:lnnz], l_data[:lnnz],
            u_indptr, u_indices[:unnz], u_data[:unnz], 0)


@njit(cache=True)
def _solve_unit_lower(indptr, indices, data, b):
    """In-place forward substitution with unit-diagonal lower factor."""
    n = b.shape[0]
    for i in range(n):
        acc = b[i]
        for p in range(indptr[i], indptr[i + 1]):
            acc -= data[p] * b[indices[p]]
        b[i] = acc
    return b


@njit(cache=True)
def _solve_upper(indptr, indices, data, b):
    """In-place backward substitution; diagonal is the first entry per row."""
    n = b.shape[0]
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for p in range(indptr[i] + 1, indptr[i + 1]):
            acc -= data[p] * b[indices[p]]
        b[i] = acc / data[indptr[i]]
    return b


@njit(cache=True)
def _solve_lower(indptr, indices, data, b):
    """Forward substitution with non-unit lower factor (diagonal last per row)."""
    n = b.shape[0]
    for i in range(n):
        acc = b[i]
        for p in range(indptr[i], indptr[i + 1] - 1):
            acc -= data[p] * b[indices[p]]
        b[i] = acc / data[indptr[i + 1] - 1]
    return b


@njit(cache=True)
def _solve_lower_transposed(indptr, indices, data, b):
    """Backward scatter solve with the transpose of a lower factor."""
    n = b.shape[0]
    for i in range(n - 1, -1, -1):
        b[i] = b[i] / data[indptr[i + 1] - 1]
        xi = b[i]
        for p in range(indptr[i], indptr[i + 1] - 1):
            b[indices[p]] -= data[p] * xi
    return b


def _csr_int64(matrix):
    csr = matrix.scipy()
    return (np.asarray(csr.indptr, dtype=np.int64),
            np.asarray(csr.indices, dtype=np.int64),
            np.asarray(csr.data, dtype=np.complex128))


class IncompleteFactorization:
    """Factors of one shifted matrix, immutable after construction.

    ILU kinds store unit-lower ``L`` and upper ``U``; Cholesky kinds store a
    single lower factor ``G`` with ``sign * G G^H`` approximating the matrix.
    ``apply`` realizes the approximate inverse; ``apply_spd`` realizes the
    positive definite part ``(G G^H)^{-1}`` used by split-preconditioned
    MINRES.
    """

    def __init__(self, kind, n, *, lu=None, chol=None, diag_inv=None,
                 sign=1.0, shift=0.0, droptol=0.0):
        self.kind = kind
        self.n = n
        self._lu = lu
        self._chol = chol
        self._diag_inv = diag_inv
        self.sign = sign
        self.shift = shift
        self.droptol = droptol

    @property
    def is_spd_capable(self):
        return self.kind in ("none", "jacobi", "ic0", "ict")

    def _apply_lu(self, out):
        li, lj, lv, ui, uj, uv = self._lu
        for c in range(out.shape[1]):
            col = out[:, c]
            _solve_unit_lower(li, lj, lv, col)
            _solve_upper(ui, uj, uv, col)
        return out

    def _apply_chol(self, out):
        gi, gj, gv = self._chol
        for c in range(out.shape[1]):
            col = out[:, c]
            _solve_lower(gi, gj, gv, col)
            _solve_lower_transposed(gi, gj, gv, col)
        return out

    def apply(self, x):
        """Approximate ``matrix^{-1} x`` (two triangular solves)."""
        squeeze = (np.ndim(x) == 1)
        out = np.array(x, dtype=np.complex128, copy=True, ndmin=2)
        if squeeze:
            out = out.reshape(-1, 1)
        if self.kind == "none":
            pass
        elif self.kind == "jacobi":
            out *= self._diag_inv[:, None]
        elif self.kind in ("ilu0", "ilut"):
            self._apply_lu(out)
        else:
            self._apply_chol(out)
            if self.sign < 0:
                out = -out
        return out[:, 0] if squeeze else out

    def apply_spd(self, x):
        """Positive definite preconditioner action for split MINRES."""
        if not self.is_spd_capable:
            raise ValueError(f"kind {self.kind!r} has no SPD split form")
        squeeze = (np.ndim(x) == 1)
        out = np.array(x, dtype=np.complex128, copy=True, ndmin=2)
        if squeeze:
            out = out.reshape(-1, 1)
        if self.kind == "none":
            pass
        elif self.kind == "jacobi":
            out *= np.abs(self._diag_inv)[:, None]
        else:
            self._apply_chol(out)
        return out[:, 0] if squeeze else out

    def factors(self):
        """L, U (ILU kinds) or G (Cholesky kinds) as SparseMatrix objects."""
        n = self.n
        if self.kind in ("ilu0", "ilut"):
            li, lj, lv, ui, uj, uv = self._lu
            L = sp.csr_matrix((lv, lj, li), shape=(n, n)) + sp.eye(n)
            U = sp.csr_matrix((uv, uj, ui), shape=(n, n))
            return SparseMatrix(L), SparseMatrix(U)
        if self.kind in ("ic0", "ict"):
            gi, gj, gv = self._chol
            return (SparseMatrix(sp.csr_matrix((gv, gj, gi), shape=(n, n))),)
        raise ValueError(f"kind {self.kind!r} stores no factors")


def _jacobi(matrix):
    d = matrix.scipy().diagonal().astype(np.complex128)
    if np.any(np.abs(d) < _PIVOT_TINY):
        raise FactorizationBreakdown("zero diagonal entry for Jacobi")
    return IncompleteFactorization("jacobi", matrix.nrows, diag_inv=1.0 / d)


def _chol_from_ilu(kind, n, lu, sign, shift, droptol):
    """Fold symmetric ILU output L*D*L^T into the single factor G = L*sqrt(D)."""
    li, lj, lv, ui, uj, uv = lu
    d = np.empty(n, dtype=np.complex128)
    for i in range(n):
        d[i] = uv[ui[i]]
    if np.any(d.real <= 0.0) or np.any(np.abs(d.imag) > 1e-10 * np.abs(d.real)):
        raise FactorizationBreakdown("matrix is not positive definite up to dropping")
    sq = np.sqrt(d.real).astype(np.complex128)
    gi = np.empty(n + 1, dtype=np.int64)
    gnnz = int(li[n]) + n
    gj = np.empty(gnnz, dtype=np.int64)
    gv = np.empty(gnnz, dtype=np.complex128)
    pos = 0
    gi[0] = 0
    for i in range(n):
        for p in range(li[i], li[i + 1]):
            gj[pos] = lj[p]
            gv[pos] = lv[p] * sq[lj[p]]
            pos += 1
        gj[pos] = i
        gv[pos] = sq[i]
        pos += 1
        gi[i + 1] = pos
    return IncompleteFactorization(kind, n, chol=(gi, gj, gv), sign=sign,
                                   shift=shift, droptol=droptol)


def factorize(matrix, kind, droptol=0.0, shift=0.0):
    """Incomplete factorization of an assembled shifted matrix.

    Parameters
    ----------
    matrix : SparseMatrix
        Square, real or complex valued.
    kind : str
        One of ``none, jacobi, ilu0, ilut, ic0, ict``.
    droptol : float
        Drop tolerance for the threshold kinds, relative to the 2-norm of
        each original matrix row.
    shift : complex
        The shift that produced ``matrix``; kept for cache bookkeeping only.

    Raises
    ------
    FactorizationBreakdown
        On a zero/near-zero pivot or an indefinite matrix for the Cholesky
        kinds.  Callers fall back to Jacobi.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown preconditioner kind {kind!r}")
    n = matrix.nrows
    if matrix.ncols != n:
        raise ValueError("preconditioned matrix must be square")
    if kind == "none":
        return IncompleteFactorization("none", n, shift=shift)
    if kind == "jacobi":
        return _jacobi(matrix)

    work = matrix
    sign = 1.0
    if kind in ("ic0", "ict"):
        # negative definite shifted matrices are negated before the Cholesky
        # process; the sign is reapplied on application
        diag = matrix.scipy().diagonal()
        if np.real(diag).sum() < 0.0:
            work = SparseMatrix(-matrix.scipy())
            sign = -1.0

    indptr, indices, data = _csr_int64(work)
    restrict = kind in ("ilu0", "ic0")
    tol = 0.0 if restrict else float(droptol)
    lu = _ilu_kernel(n, indptr, indices, data, tol, restrict)
    if lu[-1] != 0:
        raise FactorizationBreakdown(f"zero pivot in {kind} factorization")
    lu = lu[:-1]
    if kind in ("ilu0", "ilut"):
        return IncompleteFactorization(kind, n, lu=lu, shift=shift, droptol=droptol)
    return _chol_from_ilu(kind, n, lu, sign, shift, droptol)


def apply_right_preconditioner(fact, x):
    """Right preconditioner action ``fact^{-1} x`` (module-level alias)."""
    return fact.apply(x)
