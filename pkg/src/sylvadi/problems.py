"""Reproducible convection-diffusion test problems and right hand sides.

The generated matrix is the negated finite-difference discretization of
``-laplace(u) + omega . grad(u)`` on the unit square/cube with homogeneous
Dirichlet boundaries, so its spectrum lies in the open left half plane.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix


@dataclass
class ConvDiffSpec:
    dimension: int              # 2 or 3
    n0: int                     # grid points per axis
    omega: object = None        # None, d-vector of floats, or d callables of (x[,y[,z]])

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if isinstance(self.omega, str):
            self.omega = _resolve_omega(self.omega)

    @property
    def size(self):
        return self.n0 ** self.dimension


def _omega_values(spec, coords):
    """Per-grid-point convection coefficients, shape (d, npoints)."""
    d = spec.dimension
    npts = coords.shape[1]
    if spec.omega is None:
        return np.zeros((d, npts))
    out = np.empty((d, npts))
    for axis in range(d):
        comp = spec.omega[axis]
        if callable(comp):
            out[axis] = comp(*coords)
        else:
            out[axis] = float(comp)
    return out


def convdiff_matrix(spec):
    """Stable convection-diffusion matrix for ``spec`` (5/7-point stencil).

    Uniform grid ``h = 1/(n0+1)``, central differences for the convection
    term, and a global negation so that all eigenvalues have negative real
    part.  Grid points are ordered with the first axis fastest.
    """
    d, n0 = spec.dimension, spec.n0
    h = 1.0 / (n0 + 1)
    n = spec.size
    strides = [n0 ** axis for axis in range(d)]

    idx = np.arange(n)
    multi = np.empty((d, n), dtype=np.int64)
    rem = idx
    for axis in range(d):
        multi[axis] = rem % n0
        rem = rem // n0
    coords = (multi + 1) * h
    om = _omega_values(spec, coords)

    rows = [idx]
    cols = [idx]
    vals = [np.full(n, -2.0 * d / h**2)]
    for axis in range(d):
        conv = om[axis] / (2.0 * h)
        # neighbor at +1 along `axis`: L gives -1/h^2 + conv, negated here
        has_east = multi[axis] < n0 - 1
        rows.append(idx[has_east])
        cols.append(idx[has_east] + strides[axis])
        vals.append((1.0 / h**2 - conv)[has_east])
        has_west = multi[axis] > 0
        rows.append(idx[has_west])
        cols.append(idx[has_west] - strides[axis])
        vals.append((1.0 / h**2 + conv)[has_west])

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    return SparseMatrix(mat.tocsr())


def laplacian_eigenvalues(spec):
    """Analytic eigenvalues of the negated discrete Laplacian (omega = 0)."""
    n0, d = spec.n0, spec.dimension
    h = 1.0 / (n0 + 1)
    one_d = -(4.0 / h**2) * np.sin(np.arange(1, n0 + 1) * np.pi * h / 2.0) ** 2
    acc = one_d
    for _ in range(d - 1):
        acc = np.add.outer(acc, one_d).ravel()
    return np.sort(acc)


def random_rhs(n, m, r, seed):
    """Normal right hand side factors rescaled so ``||f||_F = ||g||_F``.

    ``f`` keeps its raw normal variates; ``g`` is scaled by
    ``||f||_F / ||g||_F``.  Deterministic across platforms: a Philox
    counter-based generator keyed on ``seed``.
    """
    if r < 1:
        raise ValueError("rhs rank must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    f = rng.standard_normal((n, r))
    g = rng.standard_normal((m, r))
    g *= np.linalg.norm(f) / np.linalg.norm(g)
    return f, g


_EXAMPLE2_OMEGA_A = (
    lambda x, y, z: x * np.sin(x),
    lambda x, y, z: y * np.cos(y),
    lambda x, y, z: np.exp(z**2 - 1.0),
)
_EXAMPLE2_OMEGA_B = (
    lambda x, y, z: z * y * (x**2 - 1.0),
    lambda x, y, z: 1.0 / (y**2 + 1.0),
    lambda x, y, z: np.exp(z),
)

_NAMED_OMEGAS = {
    "zero": None,
    "example2_A": _EXAMPLE2_OMEGA_A,
    "example2_B": _EXAMPLE2_OMEGA_B,
}


def _resolve_omega(entry):
    if entry is None:
        return None
    if isinstance(entry, str):
        try:
            return _NAMED_OMEGAS[entry]
        except KeyError:
            raise ValueError(f"unknown named omega {entry!r}") from None
    return tuple(float(c) for c in entry)


@dataclass
class ProblemSpec:
    """JSON-serializable description of a two-sided test problem."""

    dimension_A: int
    n0_A: int
    dimension_B: int
    n0_B: int
    r: int
    seed: int
    omega_A: object = None
    omega_B: object = None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        dim = raw.get("dimension", 3)
        return cls(
            dimension_A=raw.get("dimension_A", dim),
            n0_A=raw["n0_A"],
            dimension_B=raw.get("dimension_B", dim),
            n0_B=raw["n0_B"],
            r=raw.get("r", 1),
            seed=raw.get("seed", 0),
            omega_A=raw.get("omega_A"),
            omega_B=raw.get("omega_B"),
        )

    def build(self):
        """Matrices and RHS: (A, B, f, g); masses are the identity."""
        spec_a = ConvDiffSpec(self.dimension_A, self.n0_A, _resolve_omega(self.omega_A))
        spec_b = ConvDiffSpec(self.dimension_B, self.n0_B, _resolve_omega(self.omega_B))
        A = convdiff_matrix(spec_a)
        B = convdiff_matrix(spec_b)
        f, g = random_rhs(A.nrows, B.nrows, self.r, self.seed)
        return A, B, f, g
