"""Incrementally updated QR factorization for the Anderson mixing problem.

The mixing step solves ``min_gamma ||f_k - F gamma||`` where the columns of
``F`` are consecutive residual differences.  ``F`` is kept as a thin QR
factorization that is grown on the right by Gram-Schmidt and shrunk on the
left with plane (Givens) rotations.  After ``refactor_period`` drops the
factors are recomputed from scratch to bound drift.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular


class NonFiniteInputError(ValueError):
    """A difference vector contains NaN or inf (usually upstream divergence)."""


class EmptyHistoryError(IndexError):
    """Tried to drop a column from an empty history."""


class DegenerateFactorError(np.linalg.LinAlgError):
    """The triangular factor has a zero on its diagonal."""


class _ColumnBuffer:
    # Columns live in buf[:, start:stop]; dropping from the left is O(1) and
    # the window is compacted only when it runs into the end of the buffer.

    def __init__(self, n: int, capacity: int):
        self.buf = np.zeros((n, max(2 * capacity, 2)), order="F")
        self.start = 0
        self.stop = 0

    @property
    def view(self) -> np.ndarray:
        return self.buf[:, self.start:self.stop]

    def __len__(self) -> int:
        return self.stop - self.start

    def append(self, col: np.ndarray) -> None:
        if self.stop == self.buf.shape[1]:
            m = len(self)
            self.buf[:, :m] = self.buf[:, self.start:self.stop]
            self.start, self.stop = 0, m
        self.buf[:, self.stop] = col
        self.stop += 1

    def drop_left(self) -> None:
        self.start += 1
        if self.start == self.stop:
            self.start = self.stop = 0

    def drop_right(self) -> None:
        self.stop -= 1
        if self.start == self.stop:
            self.start = self.stop = 0

    def assign(self, mat: np.ndarray) -> None:
        m = mat.shape[1]
        self.buf[:, :m] = mat
        self.start, self.stop = 0, m


class DifferenceBasis:
    """Residual differences ``F`` and iterate differences ``X``, oldest first."""

    def __init__(self, n: int, m_max: int):
        if m_max < 0:
            raise ValueError("m_max must be non-negative")
        self.n = n
        self.m_max = m_max
        self._F = _ColumnBuffer(n, m_max)
        self._X = _ColumnBuffer(n, m_max)

    @property
    def F(self) -> np.ndarray:
        return self._F.view

    @property
    def X(self) -> np.ndarray:
        return self._X.view

    @property
    def m(self) -> int:
        return len(self._F)

    @property
    def full(self) -> bool:
        return self.m >= self.m_max


@dataclass
class QrFactors:
    """Thin QR factors of the current ``F`` plus refactorization bookkeeping."""

    n: int
    m_max: int
    cond_limit: float = 1e12
    refactor_period: int = 10
    rotations_since_refactor: int = 0
    refactor_count: int = 0
    R: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self._Q = _ColumnBuffer(self.n, self.m_max)
        if self.R is None:
            self.R = np.zeros((0, 0))

    @property
    def Q(self) -> np.ndarray:
        return self._Q.view

    @property
    def m(self) -> int:
        return self.R.shape[0]


def new_history(n: int, m_max: int, cond_limit: float = 1e12,
                refactor_period: int = 10) -> tuple[DifferenceBasis, QrFactors]:
    """Create an empty (basis, factors) pair for an ``n``-dimensional problem."""
    basis = DifferenceBasis(n, m_max)
    qr = QrFactors(n, m_max, cond_limit=cond_limit, refactor_period=refactor_period)
    return basis, qr


def _orthonormal_complement(Q: np.ndarray) -> np.ndarray:
    # Unit vector orthogonal to range(Q), built from the least represented axis.
    n = Q.shape[0]
    j = int(np.argmin(np.einsum("ij,ij->i", Q, Q))) if Q.shape[1] else 0
    w = np.zeros(n)
    w[j] = 1.0
    for _ in range(2):
        w -= Q @ (Q.T @ w)
    return w / np.linalg.norm(w)


def append_column(basis: DifferenceBasis, qr: QrFactors,
                  f_diff: np.ndarray, x_diff: np.ndarray) -> None:
    """Append a new newest column to ``F``/``X`` and update the factors in place."""
    f_diff = np.asarray(f_diff, dtype=float)
    x_diff = np.asarray(x_diff, dtype=float)
    if f_diff.shape != (basis.n,) or x_diff.shape != (basis.n,):
        raise ValueError(f"difference vectors must have shape ({basis.n},)")
    if not (np.all(np.isfinite(f_diff)) and np.all(np.isfinite(x_diff))):
        raise NonFiniteInputError("non-finite entries in history difference")
    if basis.full:
        raise ValueError("history is full; drop the oldest column first")
    if basis.m >= basis.n:
        raise ValueError("cannot hold more than n orthonormal columns")

    Q = qr.Q
    m = qr.m
    # classical Gram-Schmidt with one reorthogonalization pass
    r = Q.T @ f_diff
    w = f_diff - Q @ r
    r2 = Q.T @ w
    w -= Q @ r2
    r += r2
    rho = np.linalg.norm(w)
    scale = np.linalg.norm(f_diff)
    if rho > 1e-10 * scale and rho > 0.0:
        q = w / rho
        diag = rho
    else:
        # numerically dependent column: keep Q orthonormal, R gets ~0 pivot
        q = _orthonormal_complement(Q)
        diag = float(q @ w)

    R = np.zeros((m + 1, m + 1))
    R[:m, :m] = qr.R
    R[:m, m] = r
    R[m, m] = diag
    qr.R = R
    qr._Q.append(q)
    basis._F.append(f_diff)
    basis._X.append(x_diff)


def refactor(basis: DifferenceBasis, qr: QrFactors) -> None:
    """Recompute ``Q`` and ``R`` from the current ``F`` by dense QR."""
    if basis.m == 0:
        qr._Q.assign(np.zeros((basis.n, 0)))
        qr.R = np.zeros((0, 0))
    else:
        Q, R = np.linalg.qr(basis.F, mode="reduced")
        qr._Q.assign(Q)
        qr.R = R
    qr.rotations_since_refactor = 0
    qr.refactor_count += 1


def drop_oldest(basis: DifferenceBasis, qr: QrFactors) -> None:
    """Remove the leftmost column and restore the factorization with Givens rotations."""
    m = basis.m
    if m == 0:
        raise EmptyHistoryError("no history column to drop")
    basis._F.drop_left()
    basis._X.drop_left()

    H = qr.R[:, 1:].copy()  # upper Hessenberg, m x (m-1)
    G = np.eye(m)  # accumulated rotations, applied to Q in one product
    for i in range(m - 1):
        a, b = H[i, i], H[i + 1, i]
        if b == 0.0:
            continue
        rad = np.hypot(a, b)
        c, s = a / rad, b / rad
        hi = H[i, i:].copy()
        H[i, i:] = c * hi + s * H[i + 1, i:]
        H[i + 1, i:] = -s * hi + c * H[i + 1, i:]
        H[i + 1, i] = 0.0
        gi = G[:, i].copy()
        G[:, i] = c * gi + s * G[:, i + 1]
        G[:, i + 1] = -s * gi + c * G[:, i + 1]
    qr._Q.assign(qr.Q @ G[:, : m - 1])
    qr.R = H[: m - 1, :]

    qr.rotations_since_refactor += 1
    if qr.rotations_since_refactor >= qr.refactor_period:
        refactor(basis, qr)


def condition_estimate(R: np.ndarray, cond_limit: float = np.inf) -> float:
    """Cheap condition estimate of a triangular ``R``.

    The ratio of extreme absolute diagonal entries is used unless it exceeds
    ``0.1 * cond_limit``; then the 2-norm condition number is computed by SVD.
    """
    if R.shape[0] == 0:
        return 1.0
    d = np.abs(np.diag(R))
    dmin = d.min()
    if dmin == 0.0:
        return np.inf
    ratio = d.max() / dmin
    if ratio > 0.1 * cond_limit:
        s = np.linalg.svd(R, compute_uv=False)
        return np.inf if s[-1] == 0.0 else float(s[0] / s[-1])
    return float(ratio)


def prune_to_condition(basis: DifferenceBasis, qr: QrFactors) -> int:
    """Drop leftmost columns until ``R`` is acceptably conditioned.

    Stops at one column unless that column is exactly zero, in which case it
    is dropped too.  Returns the number of columns dropped.
    """
    dropped = 0
    while basis.m > 1 and condition_estimate(qr.R, qr.cond_limit) > qr.cond_limit:
        drop_oldest(basis, qr)
        dropped += 1
    if basis.m == 1 and qr.R[0, 0] == 0.0:
        drop_oldest(basis, qr)
        dropped += 1
    return dropped


def mixing_coefficients(basis: DifferenceBasis, qr: QrFactors,
                        f_k: np.ndarray) -> np.ndarray:
    """Least-squares coefficients ``gamma`` for the current history."""
    if basis.m == 0:
        return np.zeros(0)
    if np.any(np.diag(qr.R) == 0.0):
        raise DegenerateFactorError("zero pivot in R; prune and retry")
    return solve_triangular(qr.R, qr.Q.T @ f_k, lower=False)


def solve_mixing(basis: DifferenceBasis, qr: QrFactors, f_k: np.ndarray,
                 x_k: np.ndarray, g_k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return the mixed iterate and mixed map ``(x_bar, y_bar)``.

    With no history this is the Picard pair ``(x_k, g_k)``.
    """
    if basis.m == 0:
        return x_k.copy(), g_k.copy()
    gamma = mixing_coefficients(basis, qr, f_k)
    dx = basis.X @ gamma
    x_bar = x_k - dx
    y_bar = g_k - (dx + basis.F @ gamma)
    return x_bar, y_bar


def alpha_from_gamma(gamma: np.ndarray) -> np.ndarray:
    """Convert difference-form coefficients to the constrained weights.

    The result has ``len(gamma) + 1`` entries, oldest iterate first, and sums
    to one.  Only used for debugging and tests.
    """
    m = len(gamma)
    alpha = np.empty(m + 1)
    if m == 0:
        alpha[0] = 1.0
        return alpha
    alpha[0] = gamma[0]
    alpha[1:m] = np.diff(gamma)
    alpha[m] = 1.0 - gamma[-1]
    return alpha


def dump_factors(basis: DifferenceBasis, qr: QrFactors, directory) -> list[Path]:
    """Write F, X, Q and R as whitespace-separated text at full precision."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, mat in (("F", basis.F), ("X", basis.X), ("Q", qr.Q), ("R", qr.R)):
        p = out / f"{name}.txt"
        np.savetxt(p, np.atleast_2d(mat) if mat.size else np.zeros((0, 0)), fmt="%.17g")
        paths.append(p)
    return paths
