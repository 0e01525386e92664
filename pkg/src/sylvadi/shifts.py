"""ADI shift parameter generation.

Shift pairs ``(alpha_k, beta_k)`` are picked greedily from Ritz-value
surrogates of the two spectra (Penzl-style heuristic): Arnoldi supplies a few
Ritz values of each operator pencil plus reciprocals of Ritz values of the
inverted pencil, and the candidate minimizing the rational objective over the
merged surrogate sets is appended one pair at a time.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

INF = float("inf")


@dataclass
class RitzSet:
    values: np.ndarray
    source: str       # "A-side" or "B-side"
    kind: str         # "direct" or "inverse"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Ritz values must be finite")


@dataclass
class ShiftSequence:
    pairs: list                      # list of (alpha, beta) complex pairs
    cyclic: bool = True

    def __post_init__(self):
        self.pairs = [(complex(a), complex(b)) for a, b in self.pairs]
        if not self.pairs:
            raise ValueError("shift sequence must not be empty")

    def __len__(self):
        return len(self.pairs)

    def at(self, k):
        """Pair for outer step ``k`` (1-based), reused cyclically."""
        i = k - 1
        if i >= len(self.pairs):
            if not self.cyclic:
                raise IndexError("shift sequence exhausted")
            i %= len(self.pairs)
        return self.pairs[i]

    def to_json(self, path):
        payload = {
            "cyclic": self.cyclic,
            "pairs": [[[a.real, a.imag], [b.real, b.imag]] for a, b in self.pairs],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        pairs = [(complex(a[0], a[1]), complex(b[0], b[1]))
                 for a, b in payload["pairs"]]
        return cls(pairs=pairs, cyclic=bool(payload.get("cyclic", True)))


def arnoldi_ritz(apply, start, steps, source="A-side", kind="direct"):
    """Ritz values from ``steps`` Arnoldi iterations with operator action ``apply``.

    Early breakdown returns the Ritz values of the Krylov space found so far.
    """
    v = np.asarray(start, dtype=np.complex128).ravel()
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        raise ValueError("Arnoldi start vector must be nonzero")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = v.size
    steps = min(steps, n)
    V = np.zeros((n, steps + 1), dtype=np.complex128)
    H = np.zeros((steps + 1, steps), dtype=np.complex128)
    V[:, 0] = v / nrm
    j = 0
    for j in range(steps):
        w = np.asarray(apply(V[:, j])).ravel().astype(np.complex128)
        # modified Gram-Schmidt with one reorthogonalization pass
        for _ in range(2):
            for i in range(j + 1):
                h = np.vdot(V[:, i], w)
                H[i, j] += h
                w -= h * V[:, i]
        hn = np.linalg.norm(w)
        H[j + 1, j] = hn
        if hn < 1e-12 * max(1.0, abs(H[j, j])):
            j += 1
            break
        V[:, j + 1] = w / hn
    else:
        j += 1
    values = np.linalg.eigvals(H[:j, :j])
    return RitzSet(values=values, source=source, kind=kind)


def pencil_ritz_sets(base, mass=None, n_direct=10, n_inverse=20, source="A-side"):
    """Direct and inverse Ritz sets of the pencil ``(base, mass)``.

    The direct set approximates eigenvalues of ``mass^{-1} base``; the
    inverse set holds reciprocals of Ritz values of the inverted operator,
    realized through sparse direct solves.
    """
    n = base.nrows
    start = np.ones(n)
    # complex factorizations: the Arnoldi basis is stored complex
    mass_lu = (None if mass is None
               else splu(mass.scipy().tocsc().astype(np.complex128)))
    base_lu = splu(base.scipy().tocsc().astype(np.complex128))

    def direct_action(x):
        y = base.scipy() @ x
        return y if mass_lu is None else mass_lu.solve(y)

    def inverse_action(x):
        y = x if mass is None else mass.scipy() @ x
        return base_lu.solve(y)

    direct = arnoldi_ritz(direct_action, start, n_direct, source, "direct")
    inv = arnoldi_ritz(inverse_action, start, n_inverse, source, "inverse")
    inv_values = 1.0 / inv.values[np.abs(inv.values) > 0]
    return direct, RitzSet(values=inv_values, source=source, kind="inverse")


def _merge(ritz):
    if isinstance(ritz, RitzSet):
        return ritz.values.copy()
    vals = [r.values if isinstance(r, RitzSet) else np.asarray(r, dtype=complex).ravel()
            for r in ritz]
    return np.concatenate(vals) if vals else np.empty(0, dtype=complex)


def shift_objective(alphas, betas, ritz_A, ritz_B):
    """Worst-case modulus of the ADI rational factor product over Ritz pairs.

    ``max over (lambda, mu)`` of ``prod_i |(lambda - alpha_i)(mu - beta_i)| /
    |(lambda + beta_i)(mu + alpha_i)|``; denominators within ``1e-14 * scale``
    of zero yield an infinity sentinel.
    """
    lam = _merge(ritz_A)
    mu = _merge(ritz_B)
    alphas = np.asarray(alphas, dtype=complex).ravel()
    betas = np.asarray(betas, dtype=complex).ravel()
    if alphas.size != betas.size:
        raise ValueError("alpha and beta candidate sets must pair up")
    scale = max(np.abs(lam).max(initial=0.0), np.abs(mu).max(initial=0.0), 1.0)
    prod = np.ones((lam.size, mu.size))
    for a, b in zip(alphas, betas):
        den_l = np.abs(lam + b)
        den_m = np.abs(mu + a)
        if np.any(den_l <= 1e-14 * scale) or np.any(den_m <= 1e-14 * scale):
            return INF
        prod *= np.outer(np.abs(lam - a) / den_l, np.abs(mu - b) / den_m)
    return float(prod.max())


def heuristic_shifts(ritz_A, ritz_B, npairs=20):
    """Greedy Penzl-style selection of ``npairs`` shift pairs.

    Candidates are the (merged direct and inverse) Ritz values themselves;
    the first pair minimizes the single-pair objective over all candidate
    combinations, each following pair minimizes the cumulative objective.
    Candidates with nonnegative real part and combinations that hit a
    denominator are excluded.  Ties break toward the smallest total
    imaginary modulus, then the smallest total modulus.
    """
    lam = _merge(ritz_A)
    mu = _merge(ritz_B)
    cand_a = lam[lam.real < 0.0]
    cand_b = mu[mu.real < 0.0]
    if cand_a.size == 0 or cand_b.size == 0:
        raise ValueError("no stable shift candidates in the Ritz sets")
    scale = max(np.abs(lam).max(), np.abs(mu).max(), 1.0)

    # rational factor pieces over the surrogate grid, precomputed per candidate
    num_a = np.abs(lam[:, None] - cand_a[None, :])        # |lam - alpha|
    den_b = np.abs(lam[:, None] + cand_b[None, :])        # |lam + beta|
    num_b = np.abs(mu[:, None] - cand_b[None, :])         # |mu - beta|
    den_a = np.abs(mu[:, None] + cand_a[None, :])         # |mu + alpha|
    ok_a = np.all(den_a > 1e-14 * scale, axis=0)
    ok_b = np.all(den_b > 1e-14 * scale, axis=0)

    prod = np.ones((lam.size, mu.size))
    pairs = []
    for _ in range(npairs):
        best = None
        for ia in range(cand_a.size):
            if not ok_a[ia]:
                continue
            for ib in range(cand_b.size):
                if not ok_b[ib]:
                    continue
                u = num_a[:, ia] / den_b[:, ib]
                v = num_b[:, ib] / den_a[:, ia]
                obj = float((prod * np.outer(u, v)).max())
                key = (obj,
                       abs(cand_a[ia].imag) + abs(cand_b[ib].imag),
                       abs(cand_a[ia]) + abs(cand_b[ib]))
                if best is None or key < best[0]:
                    best = (key, ia, ib)
        if best is None:
            raise ValueError("all shift candidates hit a singular denominator")
        _, ia, ib = best
        a, b = cand_a[ia], cand_b[ib]
        pairs.append((complex(a), complex(b)))
        prod *= np.outer(num_a[:, ia] / den_b[:, ib], num_b[:, ib] / den_a[:, ia])
    return ShiftSequence(pairs=pairs, cyclic=True)
