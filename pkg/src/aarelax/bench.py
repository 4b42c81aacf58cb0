"""Multi-draw benchmark harness.

Runs a grid of AA variants over many random draws of a problem, picks the
history depth per algorithm from pilot timings, and reduces the results to
performance profiles and median tables with order-statistic confidence
intervals.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import binom

from .accel import RelaxConfig, algo_label, solve
from .problems import make_problem

log = logging.getLogger(__name__)

DEFAULT_M_GRID = (2, 4, 8, 16, 32, 64)


@dataclass
class AlgorithmSpec:
    kind: str = "aa"
    beta: float = 1.0
    T: int = 1
    composite: bool = False
    m: Optional[int] = None
    config: RelaxConfig = field(default_factory=RelaxConfig)
    name: Optional[str] = None

    def __post_init__(self):
        if self.T != self.config.T:
            self.config = RelaxConfig(**{**self.config.__dict__, "T": self.T})

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return algo_label(self.kind, self.beta, self.T, self.composite,
                          self.config.regularize)

    @classmethod
    def from_dict(cls, d: dict) -> "AlgorithmSpec":
        cfg_keys = {"beta_default", "beta_max", "delta", "P", "regularize", "opt0_fallback"}
        cfg = RelaxConfig(T=int(d.get("T", 1)),
                          **{k: d[k] for k in cfg_keys if k in d})
        return cls(kind=d.get("kind", d.get("strategy", "aa")),
                   beta=float(d.get("beta", 1.0)), T=int(d.get("T", 1)),
                   composite=bool(d.get("composite", False)), m=d.get("m"),
                   config=cfg, name=d.get("name"))


@dataclass
class ExperimentPlan:
    problem: dict
    algorithms: list
    m_grid: tuple = DEFAULT_M_GRID
    draws: int = 100
    tol: Optional[float] = None
    max_maps: int = 10_000
    seed_base: int = 0
    pilot_draws: int = 20
    level: float = 0.99

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if not self.algorithms:
            raise ValueError("plan needs at least one algorithm")
        self.algorithms = [a if isinstance(a, AlgorithmSpec) else AlgorithmSpec.from_dict(a)
                           for a in self.algorithms]
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ValueError("algorithm labels must be unique")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {"problem", "algorithms", "m_grid", "draws", "tol", "max_maps",
                 "seed_base", "pilot_draws", "level"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        if "problem" not in d or "algorithms" not in d:
            raise ValueError("plan needs 'problem' and 'algorithms'")
        d = dict(d)
        if "m_grid" in d:
            d["m_grid"] = tuple(int(m) for m in d["m_grid"])
        return cls(**d)

    def problem_for(self, draw: int):
        desc = dict(self.problem)
        desc["seed"] = self.seed_base + draw
        return make_problem(desc)


@dataclass
class RunRecord:
    draw: int
    algo: str
    m: int
    converged: bool
    iterations: int
    maps: int
    time_s: float
    beta_trace: list = field(default_factory=list, repr=False)
    objective_trace: list = field(default_factory=list, repr=False)


def run_one(problem, spec: AlgorithmSpec, m: int, tol, max_maps: int, draw: int) -> RunRecord:
    """Solve a single draw; failures are recorded as non-converged runs."""
    try:
        rep = solve(problem, spec.kind, m=m, tol=tol, max_maps=max_maps,
                    config=spec.config, beta=spec.beta, composite=spec.composite,
                    label=spec.label)
    except Exception as exc:  # a sweep never aborts on one bad run
        log.warning("run failed: draw=%d algo=%s m=%d: %s", draw, spec.label, m, exc)
        return RunRecord(draw, spec.label, m, False, 0, max_maps, np.inf)
    return RunRecord(draw, spec.label, m, rep.converged, rep.iterations, rep.map_count,
                     rep.elapsed_ns * 1e-9, rep.beta_trace, rep.objective_trace)


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------

def _quantile_inf(values, q: float) -> float:
    # inverted-CDF quantile: always an observed value, so +inf is handled
    v = np.sort(np.asarray(values, dtype=float))
    idx = int(np.ceil(q * len(v))) - 1
    return float(v[min(max(idx, 0), len(v) - 1)])


def select_m(timings: dict, quantile: float = 0.75) -> tuple[dict, list]:
    """Pick the depth with the smallest ``quantile`` of run time per algorithm.

    ``timings`` maps ``algo -> {m: [times]}`` with ``inf`` for non-converged
    runs.  Ties go to the smaller ``m``.  Returns ``(choice, notes)`` where
    algorithms whose every depth failed are left out of ``choice`` and
    mentioned in ``notes``.
    """
    choice, notes = {}, []
    for algo, by_m in timings.items():
        best_m, best_q = None, np.inf
        for m in sorted(by_m):
            qv = _quantile_inf(by_m[m], quantile)
            if qv < best_q:
                best_m, best_q = m, qv
        if best_m is None:
            notes.append(f"{algo}: no depth converged in pilot draws; excluded")
        else:
            choice[algo] = best_m
    return choice, notes


def median_ci_ranks(n: int, level: float = 0.99) -> tuple[int, int, bool]:
    """1-based order-statistic ranks of a distribution-free median interval.

    Returns ``(lo, hi, exact)``.  ``exact`` is False when ``n`` is too small
    for the requested level, in which case the ranks are ``(1, n)``.
    """
    alpha = 1.0 - level
    lo = int(binom.ppf(alpha / 2, n, 0.5))
    # ppf gives the smallest k with cdf(k) >= alpha/2, so cdf(lo-1) < alpha/2
    if lo < 1:
        return 1, n, False
    return lo, n - lo + 1, True


def median_ci(samples, level: float = 0.99) -> tuple[float, float]:
    """Order-statistic confidence interval for the median.

    Coverage is at least ``level``; for tiny samples the full range is
    returned (see :func:`median_ci_ranks`).
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("median_ci needs at least one sample")
    lo, hi, _ = median_ci_ranks(x.size, level)
    return float(x[lo - 1]), float(x[hi - 1])


@dataclass
class Profile:
    tau: np.ndarray
    rho: dict
    excluded: int


def performance_profile(times: dict, tau_grid=None) -> Profile:
    """Dolan-More performance profiles.

    ``times`` maps ``algo -> array over draws`` (``inf`` = not converged).
    Draws on which no algorithm converged are dropped from the denominator
    and counted in ``Profile.excluded``.
    """
    tau = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    algos = list(times)
    T = np.vstack([np.asarray(times[a], dtype=float) for a in algos])
    best = T.min(axis=0)
    keep = np.isfinite(best)
    excluded = int((~keep).sum())
    T, best = T[:, keep], best[keep]
    n = T.shape[1]
    rho = {}
    for a, row in zip(algos, T):
        ratio = row / best if n else row
        ratio_sorted = np.sort(ratio)
        counts = np.searchsorted(ratio_sorted, tau, side="right")
        rho[a] = counts / n if n else np.zeros_like(tau)
    return Profile(tau=tau, rho=rho, excluded=excluded)


def default_tau_grid() -> np.ndarray:
    return np.geomspace(1.0, 32.0, 200)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

@dataclass
class ProfileTable:
    records: list
    chosen_m: dict
    level: float = 0.99
    notes: list = field(default_factory=list)

    @property
    def algorithms(self) -> list:
        seen = []
        for r in self.records:
            if r.algo not in seen:
                seen.append(r.algo)
        return seen

    def for_algo(self, algo: str) -> list:
        return sorted((r for r in self.records if r.algo == algo), key=lambda r: r.draw)

    def times(self) -> dict:
        out = {}
        for a in self.algorithms:
            out[a] = np.array([r.time_s if r.converged else np.inf for r in self.for_algo(a)])
        return out

    def profile(self, tau_grid=None) -> Profile:
        return performance_profile(self.times(), tau_grid)

    def summary(self, level: Optional[float] = None) -> list:
        level = self.level if level is None else level
        rows = []
        for a in self.algorithms:
            recs = self.for_algo(a)
            it = median_ci([r.iterations for r in recs], level)
            mp = median_ci([r.maps for r in recs], level)
            tm = median_ci([r.time_s for r in recs], level)
            rows.append({
                "algo": a, "m": recs[0].m,
                "iter_lo": it[0], "iter_hi": it[1],
                "maps_lo": mp[0], "maps_hi": mp[1],
                "time_lo": tm[0], "time_hi": tm[1],
                "converged_rate": sum(r.converged for r in recs) / len(recs),
            })
        return rows


SUMMARY_FIELDS = ["algo", "m", "iter_lo", "iter_hi", "maps_lo", "maps_hi",
                  "time_lo", "time_hi", "converged_rate"]
PROFILE_FIELDS = ["algo", "tau", "rho"]


def write_summary_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in SUMMARY_FIELDS})


def write_profile_csv(profile: Profile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_FIELDS)
        for a, rho in profile.rho.items():
            for t, r in zip(profile.tau, rho):
                w.writerow([a, repr(float(t)), repr(float(r))])


def pilot_sweep(plan: ExperimentPlan) -> dict:
    """Time every (algorithm, m) pair over ``plan.pilot_draws`` draws."""
    timings = {a.label: {m: [] for m in plan.m_grid} for a in plan.algorithms}
    for d in range(plan.pilot_draws):
        problem = plan.problem_for(d)
        for a in plan.algorithms:
            for m in plan.m_grid:
                if m > problem.n:
                    continue
                rec = run_one(problem, a, m, plan.tol, plan.max_maps, d)
                timings[a.label][m].append(rec.time_s if rec.converged else np.inf)
    for by_m in timings.values():
        for m in [m for m, v in by_m.items() if not v]:
            del by_m[m]
    return timings


def run_experiment(plan: ExperimentPlan) -> tuple[ProfileTable, list]:
    """Run every algorithm on every draw; returns the table and summary rows.

    Algorithms without a fixed ``m`` get one from a pilot sweep.  Runs are
    serial so that wall-clock times are comparable.
    """
    chosen, notes = {}, []
    need_pilot = [a for a in plan.algorithms if a.m is None]
    if need_pilot:
        pilot_plan = ExperimentPlan(problem=plan.problem, algorithms=need_pilot,
                                    m_grid=plan.m_grid, draws=plan.draws, tol=plan.tol,
                                    max_maps=plan.max_maps, seed_base=plan.seed_base,
                                    pilot_draws=plan.pilot_draws, level=plan.level)
        chosen, notes = select_m(pilot_sweep(pilot_plan))
    for a in plan.algorithms:
        if a.m is not None:
            chosen[a.label] = int(a.m)

    active = [a for a in plan.algorithms if a.label in chosen]
    records = []
    for d in range(plan.draws):
        problem = plan.problem_for(d)  # construction is outside the timed region
        for a in active:
            records.append(run_one(problem, a, chosen[a.label], plan.tol, plan.max_maps, d))
    table = ProfileTable(records=records, chosen_m=chosen, level=plan.level, notes=notes)
    return table, table.summary()
