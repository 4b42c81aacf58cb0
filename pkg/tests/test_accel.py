import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aarelax import accel
from aarelax.accel import (MappingProblem, MdRelax, RelaxConfig, RelaxState, beta_hat,
                           beta_opt, guarded_step, inner_aa1, relax_md_next, solve,
                           solve_composite, step_opt0, step_opt1)
from aarelax.problems import standard_linear_problem

ALGOS = [("aa", 1.0), ("aa", 0.5), ("opt0", 1.0), ("opt1", 1.0), ("md", 1.0)]


def affine_1d(b, a=0.5):
    """g(x) = x - a (x - b); the fixed point is b."""
    return MappingProblem(g=lambda x: x - a * (x - b), x0=np.zeros(1))


def sym_contraction(rng, n):
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(0.05, 1.95, n)
    return (U * lam) @ U.T, lam


# ---------------------------------------------------------------------------
# formulas
# ---------------------------------------------------------------------------

def test_beta_opt_examples():
    assert beta_opt(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.5)
    assert beta_opt(np.array([2.0, -1.0]), np.zeros(2)) == pytest.approx(1.0)
    assert beta_opt(np.array([1.0, 1.0]), np.array([1.0, 1.0])) is None


def test_beta_opt_matches_scan():
    rng = np.random.default_rng(0)
    fx, fy = rng.standard_normal(4), rng.standard_normal(4)
    grid = np.linspace(-5, 5, 200001)
    vals = np.linalg.norm(fx[None] + grid[:, None] * (fy - fx)[None], axis=1)
    assert beta_opt(fx, fy) == pytest.approx(grid[vals.argmin()], abs=1e-4)


def test_step_opt1_is_opt0_plus_residual_on_linear_map():
    rng = np.random.default_rng(1)
    A, _ = sym_contraction(rng, 6)
    b = rng.standard_normal(6)
    prob = MappingProblem(g=lambda x: x - (A @ x - b), x0=np.zeros(6))
    xb, yb = rng.standard_normal(6), rng.standard_normal(6)
    cfg = RelaxConfig(regularize=False)
    x1, _, maps = step_opt1(xb, yb, prob, cfg)
    x0, _, _ = step_opt0(xb, yb, prob, cfg)
    assert maps == 2
    assert np.allclose(x1, x0 + prob.residual(x0), atol=1e-12)


def test_step_opt1_degenerate_and_clamp():
    prob = affine_1d(5.0)
    cfg = RelaxConfig()
    x, beta, _ = step_opt1(np.zeros(1), np.zeros(1), prob, cfg)
    assert beta == cfg.beta_default and np.array_equal(x, prob.g(np.zeros(1)))
    # the zero of the residual along the line is at beta* = 5
    x, beta, _ = step_opt1(np.zeros(1), np.ones(1), prob, cfg)
    assert beta == 3.0
    gx, gy = prob.g(np.zeros(1)), prob.g(np.ones(1))
    assert np.allclose(x, gx + 3.0 * (gy - gx))
    _, beta, _ = step_opt1(np.zeros(1), np.ones(1), prob, RelaxConfig(regularize=False))
    assert beta == pytest.approx(5.0)


def test_step_opt1_negative_beta_uses_default():
    _, beta, _ = step_opt1(np.zeros(1), np.ones(1), affine_1d(-2.0), RelaxConfig())
    assert beta == 1.0


def test_step_opt0_rules():
    cfg = RelaxConfig()
    x, beta, _ = step_opt0(np.zeros(1), np.ones(1), affine_1d(0.5), cfg)
    assert beta == pytest.approx(0.5) and x[0] == pytest.approx(0.5)
    _, beta, _ = step_opt0(np.zeros(1), np.ones(1), affine_1d(1.7), cfg)
    assert beta == 0.5
    # y_bar is the fixed point: beta* = 1 lands exactly on it
    x, beta, _ = step_opt0(np.zeros(1), np.array([2.0]), affine_1d(2.0), cfg)
    assert beta == pytest.approx(1.0) and x[0] == pytest.approx(2.0)


def test_beta_hat_examples():
    assert beta_hat(np.zeros(2), np.array([1.0, 0.0]), np.array([2.0, 5.0])) == 2.0
    rng = np.random.default_rng(2)
    xb, yb = rng.standard_normal(3), rng.standard_normal(3)
    assert beta_hat(xb, yb, xb + 0.7 * (yb - xb)) == pytest.approx(0.7)
    assert beta_hat(xb, xb, yb) is None


def test_beta_hat_matches_scan():
    rng = np.random.default_rng(3)
    xb, yb, gx = (rng.standard_normal(5) for _ in range(3))
    grid = np.linspace(-10, 10, 400001)
    d = yb - xb
    vals = np.linalg.norm(xb[None] + grid[:, None] * d[None] - gx[None], axis=1)
    assert beta_hat(xb, yb, gx) == pytest.approx(grid[vals.argmin()], abs=1e-4)


# ---------------------------------------------------------------------------
# AAmd rule
# ---------------------------------------------------------------------------

def test_md_first_two_iterations_use_default():
    cfg = RelaxConfig()
    st_ = RelaxState()
    assert relax_md_next(st_, cfg, None) == 1.0
    assert relax_md_next(st_, cfg, 2.5) == 1.0  # only one beta_hat known


def test_md_accepts_consistent_estimate():
    cfg = RelaxConfig()
    st_ = RelaxState(beta_prev_hat=2.0, n_gt1=3)
    assert relax_md_next(st_, cfg, 2.5) == 2.5
    assert st_.n_gt1 == 4


def test_md_reset_after_too_many():
    cfg = RelaxConfig()
    st_ = RelaxState(beta_prev_hat=2.0, n_gt1=11)
    assert relax_md_next(st_, cfg, 2.5) == 1.0
    assert st_.n_gt1 == 0


def test_md_rejects_jump_and_nonpositive_and_clamps():
    cfg = RelaxConfig()
    assert relax_md_next(RelaxState(beta_prev_hat=0.1), cfg, 2.5) == 1.0
    assert relax_md_next(RelaxState(beta_prev_hat=-0.5), cfg, -0.2) == 1.0
    assert relax_md_next(RelaxState(beta_prev_hat=3.5), cfg, 4.0) == 3.0


def test_md_no_reg_passes_estimate_through():
    cfg = RelaxConfig(regularize=False)
    st_ = RelaxState(beta_prev_hat=0.0, n_gt1=50)
    assert relax_md_next(st_, cfg, 40.0) == 40.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-5, 8)), min_size=1, max_size=80),
       st.integers(0, 12))
def test_md_emission_bounds_and_reset(seq, P):
    cfg = RelaxConfig(P=P)
    state = RelaxState()
    run = 0
    for bh in seq:
        beta = relax_md_next(state, cfg, bh)
        assert 0 < beta <= cfg.beta_max
        run = run + 1 if beta > 1 else 0
        assert run <= P + 1


# ---------------------------------------------------------------------------
# relaxation guarantees
# ---------------------------------------------------------------------------

def opt1_improvement_instance(rng):
    n = int(rng.integers(1, 31))
    A, _ = sym_contraction(rng, n)
    b = rng.standard_normal(n)
    f = lambda x: b - A @ x
    g = lambda x: x + f(x)
    xb, yb = rng.standard_normal(n), rng.standard_normal(n)
    beta = beta_opt(g(xb) - xb, g(yb) - yb)
    if beta is None:
        return None
    x0 = xb + beta * (yb - xb)
    x1 = g(xb) + beta * (g(yb) - g(xb))
    return np.linalg.norm(f(x0)), np.linalg.norm(f(x1))


def test_opt1_improves_on_opt0_sample():
    rng = np.random.default_rng(4)
    for _ in range(100):
        r = opt1_improvement_instance(rng)
        if r and r[0] > 1e-13:
            assert r[1] < r[0]


def projection_instance(rng):
    n = int(rng.integers(1, 31))
    A, lam = sym_contraction(rng, n)
    Ainv = np.linalg.inv(A)
    b = rng.standard_normal(n)
    f = lambda x: b - A @ x
    g = lambda x: x + f(x)
    ell = lambda v: math.sqrt(max(v @ Ainv @ v, 0.0))
    xb, yb = rng.standard_normal(n), rng.standard_normal(n)
    beta = rng.uniform(-2, 3)
    x_next = xb + beta * (yb - xb)
    bh = beta_hat(xb, yb, g(x_next))
    x_hat = xb + bh * (yb - xb)
    return ell(f(x_hat)), ell(f(x_next))


def test_projected_beta_never_worse_sample():
    rng = np.random.default_rng(5)
    for _ in range(100):
        lhs, rhs = projection_instance(rng)
        assert lhs <= rhs * (1 + 1e-12)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("algo,beta", ALGOS)
def test_scalar_contraction_converges_monotonically(algo, beta):
    prob = MappingProblem(g=lambda x: 0.5 * x, x0=np.ones(1))
    rep = solve(prob, algo, m=3, beta=beta, tol=1e-10)
    assert rep.converged and rep.stop_reason == accel.STOP_TOLERANCE
    assert rep.residual_trace[-1] <= 1e-10
    assert np.all(np.diff(rep.residual_trace) < 0)


def test_linear_opt1_roughly_three_times_faster():
    prob = standard_linear_problem().to_mapping()
    base = solve(prob, "aa", m=8)
    fast = solve(prob, "opt1", m=8)
    assert base.converged and fast.converged
    assert fast.iterations <= 0.45 * base.iterations


@pytest.mark.parametrize("algo", ["aa", "opt0", "opt1", "md"])
def test_linear_all_algorithms_within_50(algo):
    rep = solve(standard_linear_problem().to_mapping(), algo, m=8)
    assert rep.converged and rep.iterations <= 50


def test_map_budget_stop():
    prob = MappingProblem(g=lambda x: 0.999 * x, x0=np.ones(3))
    rep = solve(prob, "aa", m=0, max_maps=3)
    assert not rep.converged and rep.stop_reason == accel.STOP_MAP_BUDGET
    assert rep.map_count == 3


def test_non_finite_stop():
    prob = MappingProblem(g=lambda x: np.exp(np.exp(x * 100)), x0=np.ones(2))
    with np.errstate(over="ignore"):
        rep = solve(prob, "aa", m=2)
    assert rep.stop_reason == accel.STOP_NON_FINITE and not rep.converged


def test_picard_bitwise():
    lp = standard_linear_problem()
    prob = lp.to_mapping()
    x = prob.x0.copy()
    xs = [x]
    for _ in range(30):
        x = prob.g(x)
        xs.append(x)
    seen = []
    rep = solve(prob, "md", m=0, max_maps=31, observer=lambda k, x, f: seen.append(x.copy()))
    assert len(seen) == 31
    for a, b in zip(seen, xs):
        assert np.array_equal(a, b)
    assert rep.map_count == 31


def test_opt1_T_map_accounting_exact():
    prob = standard_linear_problem().to_mapping(tol=1e-12)
    for T in (1, 2, 4, 16):
        rep = solve(prob, "opt1", m=4, config=RelaxConfig(T=T))
        K = rep.iterations
        recomputes = sum(1 for k in range(1, K) if k == 1 or k % T == 0)
        assert rep.map_count == 1 + K + 2 * recomputes


def test_composite_map_count_about_three_per_iteration():
    prob = standard_linear_problem().to_mapping()
    rep = solve_composite(prob, "aa", m=8)
    assert rep.converged
    assert rep.map_count == 3 * (rep.iterations + 1)


def test_composite_fixed_point_absorbs():
    prob = MappingProblem(g=lambda x: np.ones(3), x0=np.ones(3))
    rep = solve_composite(prob, "md", m=4)
    assert rep.converged and rep.iterations == 0
    assert np.array_equal(rep.x, np.ones(3))


def test_inner_aa1_exact_on_scalar_affine():
    # depth-one AA solves a scalar affine map exactly in one step
    g = lambda x: 0.3 * x + 2.0
    w = inner_aa1(np.array([10.0]), g)
    assert w[0] == pytest.approx(2.0 / 0.7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["opt0", "opt1", "md"]),
       st.integers(1, 8), st.integers(1, 6))
def test_beta_trace_bounds(seed, algo, m, T):
    rng = np.random.default_rng(seed)
    n = 12
    A, _ = sym_contraction(rng, n)
    b = rng.standard_normal(n)
    prob = MappingProblem(g=lambda x: x - (A @ x - b), x0=rng.standard_normal(n))
    cfg = RelaxConfig(T=T)
    rep = solve(prob, algo, m=m, config=cfg, max_maps=2000)
    upper = 1.0 if algo == "opt0" else cfg.beta_max
    assert all(0 < b_ <= upper for b_ in rep.beta_trace)
    if algo == "md":
        run = 0
        for b_ in rep.beta_trace:
            run = run + 1 if b_ > 1 else 0
            assert run <= cfg.P + 1
    assert rep.map_count >= rep.iterations
    if rep.converged:
        assert rep.residual_trace[-1] <= prob.tol


def test_report_serialization_fields():
    rep = solve(standard_linear_problem().to_mapping(), "md", m=4)
    d = json.loads(rep.to_json())
    assert set(d) == {"algo", "m", "converged", "iterations", "maps", "time_ns",
                      "stop_reason", "residual_trace", "beta_trace"}
    assert d["maps"] == rep.map_count and len(d["residual_trace"]) == rep.iterations + 1


def test_guarded_step_rules():
    prob = MappingProblem(g=lambda x: x, x0=np.zeros(1), objective=lambda x: float(-x[0] ** 2))
    a, b = np.array([1.0]), np.array([-1.0])
    assert guarded_step(prob, a, b) is b  # tie keeps the candidate
    assert guarded_step(prob, np.array([0.5]), b)[0] == 0.5
    nan_prob = MappingProblem(g=lambda x: x, x0=np.zeros(1),
                              objective=lambda x: float("nan") if x[0] > 5 else 0.0)
    assert guarded_step(nan_prob, a, np.array([9.0])) is a


def test_guard_requires_objective():
    prob = MappingProblem(g=lambda x: 0.5 * x, x0=np.ones(1))
    with pytest.raises(ValueError):
        solve(prob, guard=True)


def test_guarded_run_objective_nondecreasing():
    # concave objective with a plain map that increases it every step
    c = np.array([1.0, -2.0, 3.0])
    prob = MappingProblem(g=lambda x: x + 0.3 * (c - x) + 0.05 * np.sin(x),
                          x0=np.zeros(3), objective=lambda x: -float(np.sum((x - c) ** 2)))
    for algo in ("aa", "md", "opt1"):
        for composite in (False, True):
            rep = solve(prob, algo, m=3, composite=composite, max_maps=500)
            assert len(rep.objective_trace) == rep.iterations + 1


@pytest.mark.parametrize("kw", [dict(beta_max=0), dict(beta_default=4), dict(T=0),
                                dict(delta=0), dict(P=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RelaxConfig(**kw)


def test_solve_argument_validation():
    prob = MappingProblem(g=lambda x: 0.5 * x, x0=np.ones(1))
    for kw in (dict(tol=0), dict(max_maps=0), dict(m=-1), dict(algo="nope")):
        with pytest.raises(ValueError):
            solve(prob, **kw)


def test_md_strategy_uses_previous_mixing_pair():
    cfg = RelaxConfig()
    s = MdRelax(cfg)
    s.reset()
    g = lambda x: x
    xb, yb = np.zeros(2), np.array([1.0, 0.0])
    _, b1 = s.step(1, xb, yb, xb, xb, g)
    _, b2 = s.step(2, xb, yb, xb, np.array([2.0, 0.0]), g)
    _, b3 = s.step(3, xb, yb, xb, np.array([2.2, 0.0]), g)
    assert (b1, b2) == (1.0, 1.0)
    assert b3 == pytest.approx(2.2)


def test_labels():
    assert accel.algo_label("opt1", T=16) == "AAopt1_16"
    assert accel.algo_label("md", composite=True) == "AAmd,c"
    assert accel.algo_label("md", regularize=False) == "AAmd(no reg.)"
    assert accel.algo_label("aa", beta=0.5) == "AA,beta=0.5"
