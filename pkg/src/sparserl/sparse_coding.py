"""Gaussian over-complete dictionaries and LARS-Lasso sparse codes.

Each hidden layer gets a dictionary whose atoms (columns) correspond to
neurons. A task embedding is reconstructed as a sparse linear combination
of atoms by solving

    min_a  0.5 * ||e - D a||_2^2 + lam * ||a||_1

with a Cholesky-based LARS homotopy (lasso variant with sign-restricted
drop steps). The code is then binarized into a neuron mask: a selected
atom is a selected neuron, regardless of coefficient sign.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_BINARIZE_EPS = 1e-12

# Bump if the dictionary sampling scheme ever changes; keyed into the
# PRNG stream so checkpoints can detect incompatible mask provenance.
DICT_STREAM_VERSION = 1


class SparseCodingError(ValueError):
    pass


@dataclass(frozen=True)
class Dictionary:
    matrix: np.ndarray  # (m, n)
    seed: int
    kind: str  # "global" or "task-local"
    layer_index: int
    task_id: int | None = None

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SparseCode:
    values: np.ndarray  # (n,)
    lam: float
    objective: float


@dataclass(frozen=True)
class NeuronMask:
    bits: np.ndarray  # bool, (n,)
    layer_index: int

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def n(self) -> int:
        return self.bits.shape[0]


def _stream_rng(*key) -> np.random.Generator:
    digest = hashlib.blake2b(
        ":".join(str(k) for k in key).encode(), digest_size=16
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def make_dictionary(seed: int, m: int, n: int, kind: str = "global",
                    layer_index: int = 1, task_id: int | None = None) -> Dictionary:
    """Sample an i.i.d. standard-normal m x n dictionary.

    Global dictionaries depend only on (seed, layer_index) and are shared
    by all tasks; task-local ones additionally key on task_id.
    """
    if m < 1 or n < 1:
        raise SparseCodingError("dictionary dimensions must be >= 1")
    if kind not in ("global", "task-local"):
        raise SparseCodingError(f"unknown dictionary kind: {kind!r}")
    if kind == "global":
        rng = _stream_rng("dict", DICT_STREAM_VERSION, seed, "global", layer_index)
        task_id = None
    else:
        if task_id is None:
            raise SparseCodingError("task-local dictionary requires task_id")
        rng = _stream_rng("dict", DICT_STREAM_VERSION, seed, "task-local",
                          layer_index, task_id)
    matrix = rng.standard_normal((m, n))
    return Dictionary(matrix=matrix, seed=seed, kind=kind,
                      layer_index=layer_index, task_id=task_id)


def lasso_objective(D, e: np.ndarray, alpha: np.ndarray, lam: float) -> float:
    mat = D.matrix if isinstance(D, Dictionary) else np.asarray(D)
    e = np.asarray(e, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if mat.shape[0] != e.shape[0] or mat.shape[1] != alpha.shape[0]:
        raise SparseCodingError(
            f"shape mismatch: D {mat.shape}, e {e.shape}, alpha {alpha.shape}")
    resid = e - mat @ alpha
    return 0.5 * float(resid @ resid) + lam * float(np.abs(alpha).sum())


class _ActiveCholesky:
    """Lower-triangular factor of the active-set Gram matrix.

    Insertions extend the factor in O(k^2); deletions and any numerical
    loss of positive definiteness fall back to a full refactorization.
    """

    def __init__(self, D: np.ndarray):
        self.D = D
        self.active: list[int] = []
        self.L = np.zeros((0, 0))

    def insert(self, j: int) -> bool:
        d_j = self.D[:, j]
        k = len(self.active)
        if k == 0:
            g = float(d_j @ d_j)
            if g <= 0:
                return False
            self.L = np.array([[np.sqrt(g)]])
            self.active.append(j)
            return True
        cross = self.D[:, self.active].T @ d_j
        w = solve_triangular(self.L, cross, lower=True)
        diag_sq = float(d_j @ d_j) - float(w @ w)
        if diag_sq <= 1e-12 * float(d_j @ d_j):
            # Gram would lose positive definiteness (rank-degenerate atom)
            return False
        newL = np.zeros((k + 1, k + 1))
        newL[:k, :k] = self.L
        newL[k, :k] = w
        newL[k, k] = np.sqrt(diag_sq)
        self.L = newL
        self.active.append(j)
        return True

    def remove(self, j: int):
        self.active.remove(j)
        self._refactor()

    def _refactor(self):
        if not self.active:
            self.L = np.zeros((0, 0))
            return
        G = self.D[:, self.active].T @ self.D[:, self.active]
        self.L = np.linalg.cholesky(G)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = solve_triangular(self.L, rhs, lower=True)
        return solve_triangular(self.L.T, y, lower=False)


def solve_lasso_lars(D, e, lam: float) -> SparseCode:
    """Exact Lasso solution at penalty `lam` via the LARS homotopy path.

    Follows the piecewise-linear solution path from lam_max downward,
    adding the most-correlated atom at each breakpoint and dropping any
    active coefficient that crosses zero, until the target penalty is
    reached. The returned coefficients satisfy the Lasso KKT conditions
    at `lam` up to solver tolerance.
    """
    mat = D.matrix if isinstance(D, Dictionary) else np.asarray(D, dtype=float)
    evec = e.values if hasattr(e, "values") and not isinstance(e, np.ndarray) else np.asarray(e)
    evec = np.asarray(evec, dtype=float)
    if lam <= 0:
        raise SparseCodingError("lambda must be > 0")
    m, n = mat.shape
    if evec.shape[0] != m:
        raise SparseCodingError(f"embedding length {evec.shape[0]} != dictionary m {m}")

    b = mat.T @ evec
    alpha = np.zeros(n)
    lam_max = float(np.max(np.abs(b))) if n else 0.0
    if lam >= lam_max or np.linalg.norm(evec) == 0.0:
        return SparseCode(values=alpha, lam=lam,
                          objective=lasso_objective(mat, evec, alpha, lam))

    chol = _ActiveCholesky(mat)
    c = b.copy()  # correlations D^T (e - D alpha)
    lam_cur = lam_max
    excluded: set[int] = set()  # rank-degenerate atoms, retried after drops
    j0 = int(np.argmax(np.abs(c)))
    chol.insert(j0)

    max_iter = 8 * (min(m, n) + 1)
    last_dropped = -1
    for _ in range(max_iter):
        A = chol.active
        idx = np.array(A)
        s = np.sign(c[idx])
        d_A = chol.solve(s)  # d alpha_A / d(-lam)
        v = mat.T @ (mat[:, idx] @ d_A)  # d c / d(-lam), == s on the active set

        inactive = np.ones(n, dtype=bool)
        inactive[idx] = False

        # Smallest decrease of lam at which an inactive correlation
        # hits the boundary |c_j| = lam.
        delta_entry = np.inf
        entry_j = -1
        for j in np.where(inactive)[0]:
            if j in excluded:
                continue
            for target, denom in ((lam_cur - c[j], 1.0 - v[j]),
                                  (lam_cur + c[j], 1.0 + v[j])):
                if denom > 1e-14:
                    dlt = target / denom
                    # zero-length steps handle exact correlation ties, but
                    # a just-dropped atom must not re-enter immediately
                    if dlt <= 1e-14 and (j == last_dropped or dlt < -1e-12):
                        continue
                    if dlt < delta_entry:
                        delta_entry = max(dlt, 0.0)
                        entry_j = j

        # Smallest decrease at which an active coefficient crosses zero.
        delta_drop = np.inf
        drop_i = -1
        for pos, i in enumerate(A):
            if d_A[pos] != 0.0:
                dlt = -alpha[i] / d_A[pos]
                if 1e-14 < dlt < delta_drop:
                    delta_drop = dlt
                    drop_i = i

        delta_stop = lam_cur - lam
        delta = min(delta_entry, delta_drop, delta_stop)

        alpha[idx] += delta * d_A
        c -= delta * v
        lam_cur -= delta

        if delta == delta_stop:
            break
        if delta == delta_drop:
            alpha[drop_i] = 0.0
            chol.remove(drop_i)
            last_dropped = drop_i
            excluded.clear()
            if not chol.active:
                # restart from the strongest remaining correlation
                jn = int(np.argmax(np.abs(c)))
                if abs(c[jn]) <= lam:
                    break
                chol.insert(jn)
        else:
            if not chol.insert(entry_j):
                excluded.add(entry_j)
    else:
        raise SparseCodingError("LARS homotopy failed to converge")

    # Polish: solve exactly at the target penalty on the final active set
    # to remove path-accumulation error.
    if chol.active:
        idx = np.array(chol.active)
        s = np.sign(c[idx])
        alpha_A = chol.solve(b[idx] - lam * s)
        keep = np.sign(alpha_A) == s  # discard sign-inconsistent round-off
        alpha[:] = 0.0
        alpha[idx[keep]] = alpha_A[keep]

    return SparseCode(values=alpha, lam=lam,
                      objective=lasso_objective(mat, evec, alpha, lam))


def kkt_residual(D, e, code: SparseCode) -> float:
    """Max violation of the Lasso stationarity conditions (0 if exact)."""
    mat = D.matrix if isinstance(D, Dictionary) else np.asarray(D, dtype=float)
    evec = e.values if hasattr(e, "values") and not isinstance(e, np.ndarray) else np.asarray(e)
    c = mat.T @ (np.asarray(evec, dtype=float) - mat @ code.values)
    active = code.values != 0.0
    viol = 0.0
    if active.any():
        viol = float(np.max(np.abs(c[active] - code.lam * np.sign(code.values[active]))))
    if (~active).any():
        viol = max(viol, float(np.max(np.abs(c[~active])) - code.lam), 0.0)
    return viol


def binarize(code: SparseCode, epsilon: float = DEFAULT_BINARIZE_EPS,
             layer_index: int = 0) -> NeuronMask:
    """Step function: neuron i is active iff |alpha_i| > epsilon."""
    if epsilon < 0:
        raise SparseCodingError("epsilon must be >= 0")
    return NeuronMask(bits=np.abs(code.values) > epsilon, layer_index=layer_index)
