"""Per-iteration trace datasets for residual and relaxation-parameter plots.

Traces are produced in "figure mode": some of them switch off the bounds on
``beta`` to expose how the raw relaxation behaves.  Every trace carries a
``figure_mode`` / ``regularize`` flag in its metadata so that it cannot be
mistaken for a benchmark run.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .accel import (ConstantRelax, MdRelax, Relaxation, RelaxConfig, beta_hat,
                    relaxed, solve)
from .problems import BratuProblem, elliptic_norm, standard_linear_problem

TRACE_FIELDS = ["k", "residual", "norm", "beta"]


@dataclass
class TraceSet:
    label: str
    rows: list = field(default_factory=list)  # (k, residual, norm_kind, beta)
    metadata: dict = field(default_factory=dict)
    map_count: int = 0
    converged: bool = False

    def residuals(self, norm: str = "euclidean") -> np.ndarray:
        return np.array([r[1] for r in self.rows if r[2] == norm])

    def betas(self) -> np.ndarray:
        seen, out = set(), []
        for k, _, _, b in self.rows:
            if k not in seen:
                seen.add(k)
                out.append(b)
        return np.array(out[1:])

    @property
    def iterations(self) -> int:
        return int(self.rows[-1][0]) if self.rows else 0


class MdFromOne(Relaxation):
    """Diagnostic: trial step with beta=1, then re-step with the fresh beta_hat.

    Costs one extra map per iteration.
    """

    kind = "md_from_one"

    def __init__(self, config: RelaxConfig):
        self.config = config

    def _trial_beta(self) -> float:
        return 1.0

    def step(self, k, x_bar, y_bar, x_k, g_k, g):
        trial = relaxed(x_bar, y_bar, self._trial_beta())
        bh = beta_hat(x_bar, y_bar, g(trial))
        beta = self.config.beta_default if bh is None else bh
        self._last = beta
        return relaxed(x_bar, y_bar, beta), beta


class MdFromPrev(MdFromOne):
    """Diagnostic: like :class:`MdFromOne` but the trial uses the previous beta_hat."""

    kind = "md_from_prev"

    def reset(self):
        self._last = self.config.beta_default

    def _trial_beta(self) -> float:
        return self._last


def _trace(problem, strategy, m, label, meta, norms=None, config=None, **kw) -> TraceSet:
    rows_by_k = []

    def observer(k, x, f):
        rows_by_k.append((k, f.copy()))

    rep = solve(problem, strategy, m=m, config=config, observer=observer, label=label, **kw)
    betas = [math.nan] + list(rep.beta_trace)
    norms = norms or {"euclidean": np.linalg.norm}
    rows = []
    for k, f in rows_by_k:
        b = betas[k] if k < len(betas) else math.nan
        for name, fn in norms.items():
            rows.append((k, float(fn(f)), name, float(b)))
    meta = dict(meta, label=label, m=m, map_count=rep.map_count,
                converged=rep.converged, iterations=rep.iterations)
    return TraceSet(label=label, rows=rows, metadata=meta,
                    map_count=rep.map_count, converged=rep.converged)


def _linear_norms(lp):
    return {"euclidean": lambda f: float(np.linalg.norm(f)),
            "elliptic": lambda f: elliptic_norm(lp, f)}


def trace_linear_aaopt(m: int = 8, tol: float = 1e-8) -> list:
    """AA with beta=1, AAopt0 and AAopt1 on the diagonal linear system, unbounded beta*."""
    lp = standard_linear_problem()
    prob = lp.to_mapping(tol=tol)
    cfg = RelaxConfig(regularize=False)
    meta = {"figure": "linear_aaopt", "problem": "linear", "figure_mode": True,
            "regularize": False, "tol": tol, "config": asdict(cfg)}
    return [
        _trace(prob, ConstantRelax(1.0), m, "AA,beta=1", meta, _linear_norms(lp), cfg),
        _trace(prob, "opt0", m, "AAopt0", meta, _linear_norms(lp), cfg),
        _trace(prob, "opt1", m, "AAopt1", meta, _linear_norms(lp), cfg),
    ]


def trace_linear_aamd(m: int = 8, tol: float = 1e-8) -> list:
    """Four ways of using the projection coefficient on the linear system."""
    lp = standard_linear_problem()
    prob = lp.to_mapping(tol=tol)
    cfg = RelaxConfig(regularize=False)
    meta = {"figure": "linear_aamd", "problem": "linear", "figure_mode": True,
            "regularize": False, "tol": tol, "config": asdict(cfg)}
    norms = _linear_norms(lp)
    return [
        _trace(prob, ConstantRelax(1.0), m, "AA,beta=1", meta, norms, cfg),
        _trace(prob, MdFromOne(cfg), m, "AAmd,beta_hat_k(from 1)", meta, norms, cfg),
        _trace(prob, MdFromPrev(cfg), m, "AAmd,beta_hat_k(from beta_hat_k-1)", meta, norms, cfg),
        _trace(prob, MdRelax(cfg), m, "AAmd,beta_hat_k-1", meta, norms, cfg),
    ]


BRATU_FIGURE_ALGOS = (
    # label, kind, beta, regularize
    ("AA,beta=1", "aa", 1.0, True),
    ("AA,beta=0.5", "aa", 0.5, True),
    ("AAopt0", "opt0", 1.0, True),
    ("AAopt1", "opt1", 1.0, True),
    ("AAmd", "md", 1.0, True),
    ("AAmd(no reg.)", "md", 1.0, False),
)


def trace_bratu(m: int = 16, composite: bool = False, grid_n: int = 50,
                lam: float = 6.0, tol: float = 1e-8, max_maps: int = 10_000) -> list:
    """Bratu traces from a zero start; composite mode counts outer iterations."""
    bp = BratuProblem(grid_n=grid_n, lam=lam)
    prob = bp.to_mapping(tol=tol)
    out = []
    for label, kind, beta, reg in BRATU_FIGURE_ALGOS:
        cfg = RelaxConfig(regularize=reg)
        if composite:
            label += ",c"
        meta = {"figure": "bratu_composite" if composite else "bratu", "problem": "bratu",
                "grid_n": grid_n, "lambda": lam, "x0": "zeros", "figure_mode": True,
                "regularize": reg, "composite": composite, "tol": tol, "config": asdict(cfg)}
        out.append(_trace(prob, kind, m, label, meta, config=cfg, beta=beta,
                          composite=composite, max_maps=max_maps))
    return out


def _slug(label: str) -> str:
    keep = [c if c.isalnum() else "_" for c in label]
    return "".join(keep).strip("_")


def write_traces(traces: list, directory, figure: str) -> list:
    """One CSV (k,residual,norm,beta) per trace plus a JSON sidecar each."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in traces:
        stem = f"{figure}__{_slug(t.label)}"
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            for k, r, norm, b in t.rows:
                w.writerow([k, repr(r), norm, "" if math.isnan(b) else repr(b)])
        with open(out / f"{stem}.json", "w") as fh:
            json.dump(t.metadata, fh, indent=2, default=float)
        paths.append(csv_path)
    return paths


FIGURES = {
    "linear-aaopt": lambda m: trace_linear_aaopt(m=m or 8),
    "linear-aamd": lambda m: trace_linear_aamd(m=m or 8),
    "bratu": lambda m: trace_bratu(m=m or 16),
    "bratu-composite": lambda m: trace_bratu(m=m or 16, composite=True),
}
