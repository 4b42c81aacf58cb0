"""Anderson acceleration driver with adaptive relaxation.

Relaxation strategies:

``aa``
    constant relaxation ``beta``.
``opt0``
    locally optimal ``beta`` applied to the mixed pair (two extra maps).
``opt1``
    locally optimal ``beta`` applied to the *maps* of the mixed pair,
    recomputed every ``T`` iterations and reused in between.
``md``
    ``beta`` from projecting the latest map onto the previous mixing
    direction; no extra maps.

Any strategy can be wrapped in the composite scheme, where every iterate is
first refined by a single depth-one AA step with ``beta = 1``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import qr_ls

STOP_TOLERANCE = "tolerance"
STOP_MAP_BUDGET = "map_budget"
STOP_NON_FINITE = "non_finite"


@dataclass
class MappingProblem:
    """A fixed-point mapping ``g`` with a default start and optional objective.

    ``objective`` is larger-is-better; when present the driver only accepts an
    accelerated iterate if it does not lower the objective relative to the
    plain map.
    """

    g: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    objective: Optional[Callable[[np.ndarray], float]] = None
    name: str = "problem"
    cond_limit: float = 1e12
    tol: float = 1e-8

    @property
    def n(self) -> int:
        return int(np.size(self.x0))

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.g(x) - x


@dataclass
class RelaxConfig:
    beta_default: float = 1.0
    beta_max: float = 3.0
    T: int = 1
    delta: float = 2.0
    P: int = 10
    # False reproduces the unbounded variants shown in convergence plots
    regularize: bool = True
    opt0_fallback: float = 0.5

    def __post_init__(self):
        if not self.beta_max > 0:
            raise ValueError("beta_max must be positive")
        if not 0 < self.beta_default <= self.beta_max:
            raise ValueError("beta_default must lie in (0, beta_max]")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.P < 0:
            raise ValueError("P must be >= 0")


@dataclass
class SolveReport:
    algo: str
    m: int
    converged: bool
    iterations: int
    map_count: int
    residual_trace: list
    beta_trace: list
    elapsed_ns: int
    stop_reason: str
    x: Optional[np.ndarray] = field(default=None, repr=False)
    objective_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "m": self.m,
            "converged": self.converged,
            "iterations": self.iterations,
            "maps": self.map_count,
            "time_ns": self.elapsed_ns,
            "stop_reason": self.stop_reason,
            "residual_trace": [float(r) for r in self.residual_trace],
            "beta_trace": [float(b) for b in self.beta_trace],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


# --------------------------------------------------------------------------
# relaxation formulas
# --------------------------------------------------------------------------

def beta_opt(f_xbar: np.ndarray, f_ybar: np.ndarray) -> Optional[float]:
    """Minimizer over beta of ``||f(x_bar) + beta (f(y_bar) - f(x_bar))||``.

    Returns ``None`` when the two residuals coincide.
    """
    diff = f_ybar - f_xbar
    denom = float(diff @ diff)
    if denom == 0.0 or not math.isfinite(denom):
        return None
    return -float(diff @ f_xbar) / denom


def beta_hat(x_bar_prev: np.ndarray, y_bar_prev: np.ndarray,
             g_xk: np.ndarray) -> Optional[float]:
    """Projection coefficient of ``g(x_k) - x_bar`` on ``y_bar - x_bar``.

    Returns ``None`` when the mixing direction is zero.
    """
    d = y_bar_prev - x_bar_prev
    denom = float(d @ d)
    if denom == 0.0 or not math.isfinite(denom):
        return None
    return float(d @ (g_xk - x_bar_prev)) / denom


def relaxed(x_bar: np.ndarray, y_bar: np.ndarray, beta: float) -> np.ndarray:
    """``x_bar + beta (y_bar - x_bar)``; exactly ``y_bar`` when beta is 1."""
    if beta == 1.0:
        return y_bar.copy()
    return x_bar + beta * (y_bar - x_bar)


def _regularize_opt1(beta_star: Optional[float], config: RelaxConfig) -> float:
    if beta_star is None:
        return config.beta_default
    if not config.regularize:
        return beta_star
    if beta_star <= 0:
        return config.beta_default
    return min(beta_star, config.beta_max)


def _regularize_opt0(beta_star: Optional[float], config: RelaxConfig) -> float:
    if beta_star is None:
        return config.opt0_fallback if config.regularize else config.beta_default
    if not config.regularize:
        return beta_star
    if 0.0 < beta_star <= 1.0:
        return beta_star
    return config.opt0_fallback


def step_opt1(x_bar, y_bar, problem, config: RelaxConfig, g=None):
    """One AAopt1 update; returns ``(x_next, beta_used, maps_used)``."""
    g = problem.g if g is None else g
    gx, gy = g(x_bar), g(y_bar)
    beta = _regularize_opt1(beta_opt(gx - x_bar, gy - y_bar), config)
    return relaxed(gx, gy, beta), beta, 2


def step_opt0(x_bar, y_bar, problem, config: RelaxConfig, g=None):
    """One AAopt0 update; returns ``(x_next, beta_used, maps_used)``."""
    g = problem.g if g is None else g
    gx, gy = g(x_bar), g(y_bar)
    beta = _regularize_opt0(beta_opt(gx - x_bar, gy - y_bar), config)
    return relaxed(x_bar, y_bar, beta), beta, 2


@dataclass
class RelaxState:
    """Memory for the AAmd relaxation rule."""

    kind: str = "md"
    beta_current: float = 1.0
    beta_prev_hat: Optional[float] = None
    beta_prev2_hat: Optional[float] = None
    n_gt1: int = 0
    last_mixing: Optional[tuple] = None


def relax_md_next(state: RelaxState, config: RelaxConfig,
                  beta_hat_new: Optional[float]) -> float:
    """Emit the AAmd relaxation parameter for the current iteration.

    ``beta_hat_new`` is the projection coefficient computed from the previous
    iteration's mixing pair (``None`` on the first iteration or when
    undefined).  The counter check uses the value left by the previous
    iteration, so at most ``P + 1`` consecutive values above one are emitted.
    """
    state.beta_prev2_hat = state.beta_prev_hat
    state.beta_prev_hat = beta_hat_new
    cur, prev = state.beta_prev_hat, state.beta_prev2_hat

    if not config.regularize:
        beta = cur if cur is not None and cur > 0 else config.beta_default
    elif (cur is not None and prev is not None and abs(cur - prev) < config.delta
          and state.n_gt1 <= config.P and cur > 0):
        beta = min(cur, config.beta_max)
    else:
        beta = config.beta_default

    state.n_gt1 = state.n_gt1 + 1 if beta > 1 else 0
    state.beta_current = beta
    return beta


def guarded_step(problem: MappingProblem, x_fallback: np.ndarray,
                 x_candidate: np.ndarray) -> np.ndarray:
    """Keep ``x_candidate`` unless it lowers the objective below the fallback."""
    obj_c = problem.objective(x_candidate)
    if not math.isfinite(obj_c):
        return x_fallback
    if obj_c >= problem.objective(x_fallback):
        return x_candidate
    return x_fallback


# --------------------------------------------------------------------------
# strategies
# --------------------------------------------------------------------------

class Relaxation:
    """Base class for a per-run relaxation strategy.

    ``step`` receives the iteration number ``k`` (starting at 1), the mixed
    pair, the current iterate and its map, and ``g`` (a map evaluator that
    counts calls).  It returns the next iterate and the ``beta`` used.
    """

    kind = "base"

    def reset(self) -> None:
        pass

    def step(self, k, x_bar, y_bar, x_k, g_k, g):
        raise NotImplementedError


class ConstantRelax(Relaxation):
    kind = "aa"

    def __init__(self, beta: float = 1.0):
        if not beta > 0:
            raise ValueError("beta must be positive")
        self.beta = beta

    def step(self, k, x_bar, y_bar, x_k, g_k, g):
        return relaxed(x_bar, y_bar, self.beta), self.beta


class Opt0Relax(Relaxation):
    kind = "opt0"

    def __init__(self, config: RelaxConfig):
        self.config = config

    def step(self, k, x_bar, y_bar, x_k, g_k, g):
        x_next, beta, _ = step_opt0(x_bar, y_bar, None, self.config, g=g)
        return x_next, beta


class Opt1Relax(Relaxation):
    kind = "opt1"

    def __init__(self, config: RelaxConfig):
        self.config = config
        self.beta = config.beta_default

    def reset(self):
        self.beta = self.config.beta_default

    def step(self, k, x_bar, y_bar, x_k, g_k, g):
        T = self.config.T
        if k == 1 or k % T == 0:
            x_next, self.beta, _ = step_opt1(x_bar, y_bar, None, self.config, g=g)
            return x_next, self.beta
        return relaxed(x_bar, y_bar, self.beta), self.beta


class MdRelax(Relaxation):
    kind = "md"

    def __init__(self, config: RelaxConfig):
        self.config = config
        self.state = RelaxState()

    def reset(self):
        self.state = RelaxState(beta_current=self.config.beta_default)

    def step(self, k, x_bar, y_bar, x_k, g_k, g):
        bh = None
        if self.state.last_mixing is not None:
            bh = beta_hat(*self.state.last_mixing, g_k)
        beta = relax_md_next(self.state, self.config, bh)
        self.state.last_mixing = (x_bar, y_bar)
        return relaxed(x_bar, y_bar, beta), beta


def make_relaxation(kind: str, config: Optional[RelaxConfig] = None,
                    beta: float = 1.0) -> Relaxation:
    config = config or RelaxConfig()
    if kind in ("aa", "constant"):
        return ConstantRelax(beta)
    if kind == "opt0":
        return Opt0Relax(config)
    if kind in ("opt1", "opt1_T"):
        return Opt1Relax(config)
    if kind == "md":
        return MdRelax(config)
    raise ValueError(f"unknown relaxation kind {kind!r}")


def algo_label(kind: str, beta: float = 1.0, T: int = 1, composite: bool = False,
               regularize: bool = True) -> str:
    if kind in ("aa", "constant"):
        label = f"AA,beta={beta:g}"
    elif kind in ("opt1", "opt1_T"):
        label = "AAopt1" if T == 1 else f"AAopt1_{T}"
    elif kind == "opt0":
        label = "AAopt0"
    elif kind == "md":
        label = "AAmd"
    else:
        label = kind
    if not regularize and kind != "aa":
        label += "(no reg.)"
    if composite:
        label += ",c"
    return label


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

class _CountingMap:
    def __init__(self, g):
        self.g = g
        self.count = 0

    def __call__(self, x):
        self.count += 1
        return self.g(x)


def inner_aa1(x: np.ndarray, g, problem: Optional[MappingProblem] = None) -> np.ndarray:
    """One iteration of depth-one AA with ``beta = 1`` started at ``x`` (2 maps).

    If ``problem`` is given, the result is guarded against ``g(g(x))``.
    """
    z1 = g(x)
    gz1 = g(z1)
    dx = z1 - x
    f1 = gz1 - z1
    df = f1 - dx
    denom = float(df @ df)
    if denom == 0.0 or not math.isfinite(denom):
        return gz1
    gamma = float(df @ f1) / denom
    w = gz1 - gamma * (dx + df)
    if problem is not None:
        return guarded_step(problem, gz1, w)
    return w


def _all_finite(v) -> bool:
    return bool(np.all(np.isfinite(v)))


def solve(problem: MappingProblem, algo="aa", m: int = 8, tol: Optional[float] = None,
          max_maps: int = 10_000, config: Optional[RelaxConfig] = None,
          beta: float = 1.0, composite: bool = False, guard: Optional[bool] = None,
          cond_limit: Optional[float] = None, x0: Optional[np.ndarray] = None,
          observer: Optional[Callable] = None, label: Optional[str] = None) -> SolveReport:
    """Run Anderson acceleration on ``problem`` until ``||g(x) - x|| <= tol``.

    Parameters
    ----------
    algo : str or Relaxation
        ``"aa"``, ``"opt0"``, ``"opt1"``, ``"md"`` or a strategy instance.
    m : int
        Maximum history depth; ``0`` gives plain fixed-point iteration.
    max_maps : int
        Stop once this many maps have been evaluated without convergence.
    composite : bool
        Refine every iterate with one depth-one AA step before mapping it.
    guard : bool, optional
        Objective guard; defaults to on iff the problem has an objective.
    observer : callable, optional
        Called as ``observer(k, x_k, f_k)`` for every evaluated iterate.
    """
    config = config or RelaxConfig()
    if isinstance(algo, Relaxation):
        strategy = algo
        kind = algo.kind
    else:
        kind = algo
        strategy = make_relaxation(algo, config, beta)
    strategy.reset()
    tol = problem.tol if tol is None else tol
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_maps < 1:
        raise ValueError("max_maps must be >= 1")
    if m < 0:
        raise ValueError("m must be >= 0")
    if guard is None:
        guard = problem.objective is not None
    if guard and problem.objective is None:
        raise ValueError("guard requested but problem has no objective")
    if label is None:
        label = algo_label(kind, beta, config.T, composite, config.regularize)

    x = np.array(problem.x0 if x0 is None else x0, dtype=float)
    n = x.size
    m_eff = min(m, n)
    basis, qr = qr_ls.new_history(
        n, m_eff, cond_limit=problem.cond_limit if cond_limit is None else cond_limit)
    g = _CountingMap(problem.g)

    residuals: list = []
    betas: list = []
    objectives: list = []
    stop = STOP_MAP_BUDGET
    converged = False
    k = 0
    x_prev = f_prev = None

    t0 = time.perf_counter_ns()
    if composite:
        x = inner_aa1(x, g, problem if guard else None)
    gx = g(x)
    while True:
        fx = gx - x
        if not _all_finite(fx):
            stop = STOP_NON_FINITE
            break
        res = float(np.linalg.norm(fx))
        residuals.append(res)
        if guard:
            objectives.append(float(problem.objective(x)))
        if observer is not None:
            observer(k, x, fx)
        if res <= tol:
            converged, stop = True, STOP_TOLERANCE
            break
        if g.count >= max_maps:
            stop = STOP_MAP_BUDGET
            break

        if k > 0 and m_eff > 0:
            if basis.full:
                qr_ls.drop_oldest(basis, qr)
            qr_ls.append_column(basis, qr, fx - f_prev, x - x_prev)
            qr_ls.prune_to_condition(basis, qr)
        x_prev, f_prev = x, fx

        if k == 0 or m_eff == 0:
            x_next = gx
        else:
            while True:
                try:
                    x_bar, y_bar = qr_ls.solve_mixing(basis, qr, fx, x, gx)
                    break
                except qr_ls.DegenerateFactorError:
                    qr_ls.drop_oldest(basis, qr)
            x_next, b = strategy.step(k, x_bar, y_bar, x, gx, g)
            betas.append(float(b))
            if guard:
                x_next = guarded_step(problem, gx, x_next)
        if not _all_finite(x_next):
            stop = STOP_NON_FINITE
            break

        k += 1
        x = x_next
        if composite:
            x = inner_aa1(x, g, problem if guard else None)
        gx = g(x)
    elapsed = time.perf_counter_ns() - t0

    return SolveReport(
        algo=label, m=m, converged=converged, iterations=k, map_count=g.count,
        residual_trace=residuals, beta_trace=betas, elapsed_ns=elapsed,
        stop_reason=stop, x=x, objective_trace=objectives,
    )


def solve_composite(problem: MappingProblem, outer_algo="aa", m: int = 8,
                    tol: Optional[float] = None, max_maps: int = 10_000,
                    config: Optional[RelaxConfig] = None, **kwargs) -> SolveReport:
    """Composite AA: ``solve`` with the one-step inner refinement switched on."""
    return solve(problem, outer_algo, m=m, tol=tol, max_maps=max_maps,
                 config=config, composite=True, **kwargs)
