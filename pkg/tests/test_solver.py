import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmmss import scaling as sc
from lmmss.errors import CompletenessError, ConfigError, DimensionError, DomainError
from lmmss.problems import PROBLEMS, make_problem, plane_problem, product_problem
from lmmss.solver import (TRACE_COLUMNS, Discrepancy, NlsProblem, SolverConfig, StepMethod,
                          StopReason, damping, finite_difference_jacobian, gradient,
                          gradient_related_check, line_search, lm_step, local_rate_check,
                          model_value, solve)


# ---------------------------------------------------------------- primitives

def test_damping_examples():
    assert damping([3.0, 4.0]) == 25.0
    assert damping(np.zeros(3)) == 0.0
    assert damping(np.array([1.0, 0.0]) / np.sqrt(2)) == pytest.approx(0.5)


def test_gradient_shape_check():
    with pytest.raises(DimensionError):
        gradient(np.ones((3, 2)), np.ones(2))


def random_instance(rng, m=9, n=6):
    J = rng.standard_normal((m, n))
    J[:, -1] = J[:, 0]                    # J is rank deficient ...
    L = sc.second_diff(n)                 # ... and so is L, but not jointly
    F = rng.standard_normal(m)
    return J, F, L, damping(F)


def test_lm_step_normal_equations_and_methods_agree():
    rng = np.random.default_rng(11)
    for _ in range(30):
        J, F, L, lam = random_instance(rng)
        lmat = np.asarray(L)
        d_qr = lm_step(J, F, L, lam, StepMethod.AUGMENTED_QR)
        d_ch = lm_step(J, F, L, lam, StepMethod.NORMAL_CHOLESKY)
        a = J.T @ J + lam * lmat.T @ lmat
        res = np.linalg.norm(a @ d_qr + J.T @ F) / np.linalg.norm(J.T @ F)
        assert res <= 1e-10
        assert np.linalg.norm(d_qr - d_ch) <= 1e-8 * np.linalg.norm(d_qr)


def test_step_minimizes_the_quadratic_model():
    rng = np.random.default_rng(12)
    for _ in range(10):
        J, F, L, lam = random_instance(rng)
        d = lm_step(J, F, L, lam)
        best = model_value(J, F, L, lam, d)
        for _ in range(50):
            delta = rng.standard_normal(d.size) * 10.0 ** rng.uniform(-6, 0)
            assert best <= model_value(J, F, L, lam, d + delta) + 1e-12 * max(1.0, best)


def test_lm_step_rejects_nonpositive_damping():
    with pytest.raises(DomainError):
        lm_step(np.eye(2), np.ones(2), np.eye(2), 0.0)


@pytest.mark.parametrize("method", list(StepMethod))
def test_lm_step_signals_completeness_violation(method):
    J = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(CompletenessError):
        lm_step(J, np.ones(2), np.array([[1.0, 1.0]]), 1.0, method)


def test_lm_step_with_identity_is_classic_lm():
    rng = np.random.default_rng(13)
    J = rng.standard_normal((5, 3))
    F = rng.standard_normal(5)
    lam = 0.7
    d = lm_step(J, F, np.eye(3), lam)
    np.testing.assert_allclose(d, -np.linalg.solve(J.T @ J + lam * np.eye(3), J.T @ F))


# --------------------------------------------------------------- config & types

@pytest.mark.parametrize("kwargs", [
    {"nu": 0.0}, {"eta": 1.0}, {"vartheta": 1.5}, {"eps": -1.0}, {"max_iter": -1},
    {"step_method": "bogus"},
])
def test_solver_config_validation(kwargs):
    with pytest.raises((ConfigError, ValueError)):
        SolverConfig(**kwargs)


def test_discrepancy_validation_and_boundary():
    with pytest.raises(ConfigError):
        Discrepancy(0.9, 1.0)
    with pytest.raises(ConfigError):
        Discrepancy(1.1, -1.0)
    assert Discrepancy(1.5, 2.0).reached(3.0)      # inclusive
    assert not Discrepancy(1.5, 2.0).reached(3.0000001)


def test_problem_requires_m_ge_n():
    with pytest.raises(DimensionError):
        NlsProblem(lambda x: x[:1], lambda x: np.ones((1, 2)), n=2, m=1)


def test_finite_difference_jacobian_matches_problems():
    rng = np.random.default_rng(14)
    for name in PROBLEMS:
        case = make_problem(name)
        for _ in range(5):
            x = case.x0 + 0.3 * rng.standard_normal(case.problem.n)
            fd = finite_difference_jacobian(case.problem.residual, x)
            ex = case.problem.jacobian(x)
            assert np.linalg.norm(fd - ex) <= 1e-5 * max(np.linalg.norm(ex), 1.0)


# ---------------------------------------------------------------- line search

def test_line_search_accepts_full_step_on_contraction():
    case = product_problem()
    p = case.problem
    x = case.x0
    F = p.residual(x)
    d = lm_step(p.jacobian(x), F, case.L, damping(F))
    alpha, x_new, _ = line_search(p, x, d, SolverConfig())
    assert alpha == 1.0
    np.testing.assert_allclose(x_new, x + d)


def test_line_search_backtracks_on_overshoot():
    # phi = 0.5 (x^2 - 1)^2 style problem; a long step overshoots
    p = NlsProblem(lambda x: np.array([x[0] ** 2 - 1.0]), lambda x: np.array([[2 * x[0]]]),
                   n=1, m=1)
    x = np.array([3.0])
    d = np.array([-6.5])   # x + d = -3.5 has a larger residual
    alpha, x_new, F_new = line_search(p, x, d, SolverConfig())
    assert alpha is not None and alpha < 1.0
    assert p.phi(x_new) < p.phi(x)


def test_line_search_failure_is_terminal_status():
    # the "Jacobian" has the wrong sign, so every direction is uphill
    p = NlsProblem(lambda x: np.array([x[0] - 1.0, 0.0]),
                   lambda x: np.array([[-1.0], [0.0]]), n=1, m=2)
    x, trace = solve(p, np.eye(1), np.array([0.0]), SolverConfig(max_backtracks=5))
    assert trace.stop_reason is StopReason.LINE_SEARCH_FAILURE
    assert trace.iterations == 0
    np.testing.assert_array_equal(x, [0.0])


# -------------------------------------------------------------------- solve

@pytest.mark.parametrize("name", list(PROBLEMS))
def test_solve_zero_residue_problems(name):
    case = make_problem(name)
    x, trace = solve(case.problem, case.L, case.x0, SolverConfig(eps=1e-10, diagnostics=True))
    assert trace.stop_reason in (StopReason.SMALL_GRADIENT, StopReason.SMALL_STEP)
    assert case.problem.dist(x) < 1e-9
    resid = trace.column("resid_norm")
    assert np.all(np.diff(resid) <= 0)
    assert gradient_related_check(trace).passed


def test_product_problem_quadratic_ratios():
    case = product_problem()
    _, trace = solve(case.problem, case.L, case.x0, SolverConfig(eps=1e-12))
    rep = local_rate_check(trace)
    # independent hand-computed oracle for the first LMMSS step from (0.5, 0.3)
    assert trace.records[1].dist == pytest.approx(0.0782034725, rel=1e-8)
    assert rep.max_ratio < 1.0 and rep.accelerating and rep.decreasing
    assert trace.stop_reason is StopReason.SMALL_GRADIENT


def test_product_first_step_by_hand():
    # x0 = (0.5, 0.3): F = (0.5, 0.15), lam = 0.2725, L = [-1, 1]
    x0 = np.array([0.5, 0.3])
    F = np.array([0.5, 0.15])
    J = np.array([[1.0, 0.0], [0.3, 0.5]])
    lam = 0.2725
    a = J.T @ J + lam * np.array([[1.0, -1.0], [-1.0, 1.0]])
    d = np.linalg.solve(a, -J.T @ F)
    np.testing.assert_allclose(lm_step(J, F, [[-1.0, 1.0]], lam), d, rtol=1e-12)
    case = product_problem(tuple(x0))
    _, trace = solve(case.problem, case.L, x0, SolverConfig(max_iter=1))
    np.testing.assert_allclose(trace.records[1].x, x0 + d, rtol=1e-12)


def test_max_iter_zero_returns_start():
    case = plane_problem()
    x, trace = solve(case.problem, case.L, case.x0, SolverConfig(max_iter=0))
    assert trace.stop_reason is StopReason.MAX_ITER and len(trace) == 1
    np.testing.assert_array_equal(x, case.x0)


def test_discrepancy_stop_is_first_crossing():
    case = make_problem("rank_deficient", seed=3)
    noise = 1e-3
    cfg = SolverConfig(eps=0.0, discrepancy=Discrepancy(1.0, noise))
    _, trace = solve(case.problem, case.L, case.x0, cfg)
    assert trace.stop_reason is StopReason.DISCREPANCY
    resid = trace.column("resid_norm")
    assert resid[-1] <= noise and np.all(resid[:-1] > noise)


def test_solve_rejects_bad_start_and_operator():
    case = plane_problem()
    with pytest.raises(DimensionError):
        solve(case.problem, case.L, np.zeros(2))
    with pytest.raises(DimensionError):
        solve(case.problem, np.eye(2), case.x0)


def test_small_step_rule():
    case = plane_problem()
    _, trace = solve(case.problem, case.L, case.x0, SolverConfig(eps=0.5))
    assert trace.stop_reason in (StopReason.SMALL_STEP, StopReason.SMALL_GRADIENT)
    assert trace.iterations >= 1


def test_trace_csv_roundtrip(tmp_path):
    case = product_problem()
    _, trace = solve(case.problem, case.L, case.x0, SolverConfig(eps=1e-10))
    path = tmp_path / "t.csv"
    text = trace.to_csv(path)
    assert path.read_text() == text
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(trace)
    assert rows[-1]["alpha"] == "" and rows[-1]["step_norm"] == ""
    assert float(rows[0]["lambda"]) == pytest.approx(trace.records[0].lam)


def test_diagnostics_fill_step_bound():
    case = make_problem("rank_deficient", seed=5)
    _, trace = solve(case.problem, case.L, case.x0, SolverConfig(eps=1e-10, diagnostics=True))
    for r in trace.steps:
        assert r.gamma_hat > 0
        assert r.step_norm <= r.step_bound * (1 + 1e-10)


def test_solve_is_deterministic():
    case = make_problem("rank_deficient", seed=9)
    x1, t1 = solve(case.problem, case.L, case.x0)
    x2, t2 = solve(case.problem, case.L, case.x0)
    np.testing.assert_array_equal(x1, x2)
    assert t1.to_csv() == t2.to_csv()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_gradient_related_and_monotone_on_random_problems(seed, offset):
    case = make_problem("rank_deficient", seed=seed, offset=offset)
    _, trace = solve(case.problem, case.L, case.x0, SolverConfig(eps=1e-10, diagnostics=True))
    assert gradient_related_check(trace).passed
    assert np.all(np.diff(trace.column("resid_norm")) <= 0)


def test_gradient_related_check_needs_constants():
    case = product_problem()
    _, trace = solve(case.problem, case.L, case.x0)
    with pytest.raises(ValueError):
        gradient_related_check(trace)
    with pytest.raises(DimensionError):
        gradient_related_check(trace, gamma_hats=[])


def test_local_rate_check_needs_distances():
    p = NlsProblem(lambda x: x, lambda x: np.eye(2), n=2, m=2)
    _, trace = solve(p, np.eye(2), np.ones(2))
    with pytest.raises(ValueError):
        local_rate_check(trace)
