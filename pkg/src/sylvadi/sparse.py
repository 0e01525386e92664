"""Sparse CSR storage, matrix-vector kernels, shifted operators and Matrix Market I/O.

All coefficient matrices are stored in compressed sparse row layout.  Vector
blocks (right hand sides, iterates, residual factors) are plain numpy arrays of
shape ``(n, r)``, complex-valued where needed.
"""

import numpy as np
import scipy.sparse as sp
from scipy.io import mmread, mmwrite


class SparseFormatError(ValueError):
    """Raised for malformed sparse input (files or raw arrays)."""


class DimensionMismatch(ValueError):
    """Raised when operand dimensions do not agree."""


class SparseMatrix:
    """Immutable CSR matrix.

    Parameters
    ----------
    arg : scipy sparse matrix, dense ndarray, or SparseMatrix
        Data to store; converted to canonical CSR (sorted, deduplicated).

    Notes
    -----
    Row offsets are monotone of length ``nrows + 1``; column indices are
    strictly increasing within each row; no explicit duplicates remain.
    Input coefficient matrices are real; complex entries only appear in
    shifted matrices assembled by :func:`assemble_shifted`.
    """

    __slots__ = ("_csr",)

    def __init__(self, arg):
        if isinstance(arg, SparseMatrix):
            csr = arg._csr
        elif sp.issparse(arg):
            csr = arg.tocsr()
        else:
            a = np.asarray(arg)
            if a.ndim != 2:
                raise SparseFormatError("expected a 2-d array")
            csr = sp.csr_matrix(a)
        csr.sum_duplicates()
        csr.sort_indices()
        if not np.all(np.isfinite(csr.data)):
            raise SparseFormatError("matrix contains non-finite entries")
        self._csr = csr

    # -- basic attributes ---------------------------------------------------
    @property
    def nrows(self):
        return self._csr.shape[0]

    @property
    def ncols(self):
        return self._csr.shape[1]

    @property
    def shape(self):
        return self._csr.shape

    @property
    def offsets(self):
        return self._csr.indptr

    @property
    def indices(self):
        return self._csr.indices

    @property
    def values(self):
        return self._csr.data

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def dtype(self):
        return self._csr.dtype

    def scipy(self):
        """The underlying scipy CSR matrix (do not mutate)."""
        return self._csr

    def toarray(self):
        return self._csr.toarray()

    def conj_transpose(self):
        return SparseMatrix(self._csr.conj().T.tocsr())

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


def identity(n):
    return SparseMatrix(sp.eye(n, format="csr"))


def _as_block(x, nrows=None):
    x = np.asarray(x)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise DimensionMismatch("vector block must be 1-d or 2-d")
    if nrows is not None and x.shape[0] != nrows:
        raise DimensionMismatch(
            f"block has {x.shape[0]} rows, operator expects {nrows}")
    return x


def spmv(matrix, x):
    """Product ``matrix @ x`` for a vector block ``x``.

    A real matrix applied to a complex block acts separately on real and
    imaginary parts (scipy does exactly this).
    """
    x = _as_block(x, matrix.ncols)
    return matrix.scipy() @ x


def spmv_transpose(matrix, x):
    """Product ``matrix.T @ x`` without materializing the transpose.

    The CSR-to-CSC view used here is a scatter-style transpose kernel; the
    transposed matrix is never stored.
    """
    x = _as_block(x, matrix.nrows)
    return matrix.scipy().T @ x


def assemble_shifted(base, mass, shift):
    """Explicit sparse sum ``base + shift * mass`` with merged pattern.

    ``mass=None`` means the identity.  Result is complex-valued when the
    shift has a nonzero imaginary part.
    """
    if mass is None:
        mass_csr = sp.eye(base.nrows, base.ncols, format="csr")
    else:
        if mass.shape != base.shape:
            raise DimensionMismatch("base and mass dimensions disagree")
        mass_csr = mass.scipy()
    shift = complex(shift)
    if shift.imag == 0.0:
        shifted = base.scipy() + shift.real * mass_csr
    else:
        shifted = base.scipy().astype(complex) + shift * mass_csr
    return SparseMatrix(shifted)


class ShiftedOperator:
    """The operator ``base + shift * mass`` or its conjugate transpose.

    With ``adjoint=True`` the action is ``(base + shift*mass)^* x``, i.e.
    ``base^T x + conj(shift) mass^T x`` for real ``base``, ``mass``; this is
    the B-side operator ``(B + alpha C)^*`` of the ADI iteration.
    """

    __slots__ = ("base", "mass", "shift", "adjoint", "_assembled")

    def __init__(self, base, mass, shift, adjoint=False):
        if mass is not None and mass.shape != base.shape:
            raise DimensionMismatch("base and mass dimensions disagree")
        if base.nrows != base.ncols:
            raise DimensionMismatch("shifted operator must be square")
        self.base = base
        self.mass = mass
        self.shift = complex(shift)
        self.adjoint = bool(adjoint)
        self._assembled = None

    @property
    def n(self):
        return self.base.nrows

    def assembled(self):
        """Explicit CSR form of the (possibly adjoint) operator, cached."""
        if self._assembled is None:
            mat = assemble_shifted(self.base, self.mass, self.shift)
            if self.adjoint:
                mat = mat.conj_transpose()
            self._assembled = mat
        return self._assembled

    def apply(self, x):
        x = _as_block(x, self.n)
        if self.adjoint:
            out = spmv_transpose(self.base, x).astype(complex)
            if self.mass is None:
                out += np.conj(self.shift) * x
            else:
                out += np.conj(self.shift) * spmv_transpose(self.mass, x)
        else:
            out = spmv(self.base, x).astype(complex)
            if self.mass is None:
                out += self.shift * x
            else:
                out += self.shift * spmv(self.mass, x)
        return out


# -- Matrix Market I/O ------------------------------------------------------

def read_matrix_market(path):
    """Read a real coordinate Matrix Market file into a :class:`SparseMatrix`.

    Symmetric (and skew-symmetric) storage is expanded to the full pattern.
    Indices are 1-based on disk and 0-based in memory.
    """
    try:
        mat = mmread(path)
    except Exception as exc:
        raise SparseFormatError(f"cannot read {path}: {exc}") from exc
    if not sp.issparse(mat):
        raise SparseFormatError(f"{path} holds a dense array, expected coordinate data")
    if np.iscomplexobj(mat.data):
        raise SparseFormatError(f"{path} has a complex field, only real input is supported")
    return SparseMatrix(mat.tocsr())


def write_matrix_market(matrix, path, comment=""):
    """Write a :class:`SparseMatrix` as real coordinate Matrix Market.

    precision=17 keeps the round trip value-exact for double entries.
    """
    if np.iscomplexobj(matrix.values):
        raise SparseFormatError("only real matrices are written to coordinate files")
    mmwrite(path, matrix.scipy(), comment=comment, precision=17)


def read_dense_array(path):
    """Read a dense Matrix Market array file (real or complex)."""
    arr = mmread(path)
    if sp.issparse(arr):
        arr = arr.toarray()
    return np.asarray(arr)


def write_dense_array(arr, path, comment=""):
    """Write a dense block (e.g. RHS or solution factors) as an array file."""
    mmwrite(path, np.asarray(arr), comment=comment, precision=17)
