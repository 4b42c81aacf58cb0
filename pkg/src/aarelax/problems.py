"""Benchmark fixed-point problems.

* ``LinearDiagProblem``: ``g(x) = x - (A x - b)`` with diagonal ``A``.
* ``BratuProblem``: Jacobi-preconditioned map for ``Laplace(u) + lambda e^u = 0``
  on the unit square with zero Dirichlet data.
* ``AdmixtureProblem``: one EM sweep of the admixture (ancestry proportion)
  model, parameterized by unbounded logits.

All of them convert to :class:`~aarelax.accel.MappingProblem` via
``to_mapping`` and can be built from a JSON descriptor with
:func:`make_problem`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .accel import MappingProblem

# ---------------------------------------------------------------------------
# linear diagonal contraction
# ---------------------------------------------------------------------------


@dataclass
class LinearDiagProblem:
    diag: np.ndarray
    b: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.b = np.broadcast_to(np.asarray(self.b, dtype=float), self.diag.shape).copy()
        self.x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), self.diag.shape).copy()
        if np.any(self.diag <= 0) or np.any(self.diag >= 2):
            raise ValueError("diagonal entries must lie in (0, 2) for a contraction")

    @property
    def fixed_point(self) -> np.ndarray:
        return self.b / self.diag

    def to_mapping(self, tol: float = 1e-8) -> MappingProblem:
        return MappingProblem(g=lambda x: linear_map(self, x), x0=self.x0.copy(),
                              name="linear", tol=tol)


def standard_linear_problem() -> LinearDiagProblem:
    """``A = diag(0.1, 0.2, ..., 1.9)``, ``b = 1``, ``x0 = 0``."""
    diag = np.arange(1, 20) / 10.0
    return LinearDiagProblem(diag=diag, b=np.ones(19), x0=np.zeros(19))


def linear_map(p: LinearDiagProblem, x: np.ndarray) -> np.ndarray:
    return x - (p.diag * x - p.b)


def elliptic_norm(p: LinearDiagProblem, v: np.ndarray) -> float:
    """``sqrt(v' A^-1 v)`` for the diagonal ``A`` of ``p``."""
    return float(np.sqrt(np.sum(v * v / p.diag)))


# ---------------------------------------------------------------------------
# Bratu
# ---------------------------------------------------------------------------


@dataclass
class BratuProblem:
    grid_n: int = 50
    lam: float = 6.0
    b: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.grid_n ** 2
        self.h = 1.0 / (self.grid_n + 1)
        self.diag_value = 4.0 / self.h ** 2
        self.b = np.zeros(n) if self.b is None else np.asarray(self.b, dtype=float)
        self.x0 = np.zeros(n) if self.x0 is None else np.asarray(self.x0, dtype=float)

    @property
    def n(self) -> int:
        return self.grid_n ** 2

    def apply_laplacian(self, x: np.ndarray) -> np.ndarray:
        """Negative 5-point Laplacian (positive definite) with zero boundary."""
        N = self.grid_n
        u = x.reshape(N, N)
        out = 4.0 * u
        out[1:, :] -= u[:-1, :]
        out[:-1, :] -= u[1:, :]
        out[:, 1:] -= u[:, :-1]
        out[:, :-1] -= u[:, 1:]
        return out.ravel() / self.h ** 2

    def to_mapping(self, tol: float = 1e-8) -> MappingProblem:
        return MappingProblem(g=lambda x: bratu_map(self, x), x0=self.x0.copy(),
                              name="bratu", cond_limit=1e12, tol=tol)


def bratu_map(p: BratuProblem, x: np.ndarray) -> np.ndarray:
    """``x + (b - A x + lambda e^x) / A_ii``, all entries updated from the same ``x``."""
    with np.errstate(over="ignore", invalid="ignore"):
        return x + (p.b - p.apply_laplacian(x) + p.lam * np.exp(x)) / p.diag_value


# ---------------------------------------------------------------------------
# admixture EM
# ---------------------------------------------------------------------------

EPS = 1e-12


@dataclass
class AdmixtureProblem:
    """Genotype matrix ``X`` (individuals x markers, entries 0/1/2) and ``K``.

    The parameter vector is ``u`` (``K*J`` logits of the allele frequencies,
    row-major) followed by ``v`` (``n_ind*K`` softmax scores of the ancestry
    proportions, row-major).
    """

    K: int
    X: np.ndarray
    x0: Optional[np.ndarray] = None
    truth: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.x0 is None:
            self.x0 = np.zeros(self.dim)

    @property
    def n_ind(self) -> int:
        return self.X.shape[0]

    @property
    def J(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.K * (self.J + self.n_ind)

    def decode(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        KJ = self.K * self.J
        u = params[:KJ].reshape(self.K, self.J)
        v = params[KJ:].reshape(self.n_ind, self.K)
        F = expit(u)
        v = v - v.max(axis=1, keepdims=True)
        e = np.exp(v)
        Q = e / e.sum(axis=1, keepdims=True)
        return F, Q

    def encode(self, F: np.ndarray, Q: np.ndarray) -> np.ndarray:
        u = logit(np.clip(F, EPS, 1 - EPS))
        lq = np.log(np.clip(Q, EPS, None))
        v = lq - lq.mean(axis=1, keepdims=True)
        return np.concatenate([u.ravel(), v.ravel()])

    def to_mapping(self, tol: float = 1e-4) -> MappingProblem:
        return MappingProblem(g=lambda x: admixture_em_map(self, x), x0=self.x0.copy(),
                              objective=lambda x: admixture_loglik(self, x),
                              name="admixture", cond_limit=1e5, tol=tol)

    def write_genotypes_csv(self, path) -> None:
        """Export ``X`` as CSV, one individual per row."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"m{j}" for j in range(self.J)])
            for row in self.X.astype(int):
                w.writerow(row.tolist())


def loglik_fq(X: np.ndarray, F: np.ndarray, Q: np.ndarray) -> float:
    P = np.clip(Q @ F, EPS, 1 - EPS)
    return float(np.sum(X * np.log(P) + (2.0 - X) * np.log1p(-P)))


def admixture_loglik(p: AdmixtureProblem, params: np.ndarray) -> float:
    F, Q = p.decode(params)
    return loglik_fq(p.X, F, Q)


def em_update(X: np.ndarray, F: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One EM update of ``(F, Q)`` for the binomial admixture likelihood."""
    J = X.shape[1]
    P = np.clip(Q @ F, EPS, 1 - EPS)
    RA = X / P                    # major-allele weight per (i, j)
    RB = (2.0 - X) / (1.0 - P)    # minor-allele weight per (i, j)
    A = F * (Q.T @ RA)            # sum_i X_ij a_ijk
    B = (1.0 - F) * (Q.T @ RB)    # sum_i (2 - X_ij) b_ijk
    F_new = A / np.maximum(A + B, EPS)
    Q_new = Q * (RA @ F.T + RB @ (1.0 - F).T) / (2.0 * J)
    Q_new /= Q_new.sum(axis=1, keepdims=True)
    return F_new, Q_new


def admixture_em_map(p: AdmixtureProblem, params: np.ndarray) -> np.ndarray:
    F, Q = p.decode(params)
    return p.encode(*em_update(p.X, F, Q))


def sample_genotypes(rng: np.random.Generator, F: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Draw ``X_ij ~ Binomial(2, sum_k q_ik f_kj)``."""
    P = np.clip(Q @ F, 0.0, 1.0)
    return rng.binomial(2, P).astype(float)


def gen_admixture_data(seed, K: int = 3, J: int = 100, n_ind: int = 150) -> AdmixtureProblem:
    """Synthetic admixture instance with random truth and random start."""
    if K < 2 or J < 1 or n_ind < 1:
        raise ValueError("need K >= 2, J >= 1, n_ind >= 1")
    rng = np.random.default_rng(seed)
    F_true = rng.uniform(0.05, 0.95, size=(K, J))
    Q_true = rng.dirichlet(np.ones(K), size=n_ind)
    X = sample_genotypes(rng, F_true, Q_true)
    x0 = rng.uniform(-0.5, 0.5, size=K * (J + n_ind))
    return AdmixtureProblem(K=K, X=X, x0=x0, truth=(F_true, Q_true))


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------


def make_problem(desc: dict) -> MappingProblem:
    """Build a mapping problem from a JSON-style descriptor.

    ``{"type": "linear", "n": 19}`` uses the evenly spaced diagonal
    ``0.1 .. 1.9`` (or an explicit ``"diag"`` list); ``{"type": "bratu",
    "grid_n": 50, "lambda": 6, "seed": 3, "x0": "uniform"}``;
    ``{"type": "admixture", "seed": 0, "K": 3, "J": 100, "n_ind": 150}``.
    """
    kind = desc.get("type")
    seed = desc.get("seed")
    if kind == "linear":
        if "diag" in desc:
            diag = np.asarray(desc["diag"], dtype=float)
        else:
            n = int(desc.get("n", 19))
            diag = np.linspace(0.1, 1.9, n) if n > 1 else np.array([1.0])
        prob = LinearDiagProblem(diag=diag, b=desc.get("b", 1.0), x0=desc.get("x0", 0.0))
        return prob.to_mapping(tol=desc.get("tol", 1e-8))
    if kind == "bratu":
        grid_n = int(desc.get("grid_n", 50))
        start = desc.get("x0", "uniform" if seed is not None else "zeros")
        if start == "uniform":
            x0 = np.random.default_rng(seed).uniform(0.0, 1.0, grid_n ** 2)
        elif start == "zeros":
            x0 = np.zeros(grid_n ** 2)
        else:
            raise ValueError(f"unknown bratu start {start!r}")
        prob = BratuProblem(grid_n=grid_n, lam=float(desc.get("lambda", 6.0)), x0=x0)
        return prob.to_mapping(tol=desc.get("tol", 1e-8))
    if kind == "admixture":
        prob = gen_admixture_data(seed if seed is not None else 0, int(desc.get("K", 3)),
                                  int(desc.get("J", 100)), int(desc.get("n_ind", 150)))
        return prob.to_mapping(tol=desc.get("tol", 1e-4))
    raise ValueError(f"unknown problem type {kind!r}")
