import dataclasses
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monodsm.dsm import (
    DivergenceWarning,
    StopReason,
    StoppingRule,
    auto_schedule,
    check_error_recursion,
    check_initial_guess,
    convergence_study,
    dsm_step,
    init_u0,
    run,
)
from monodsm.linalg import LinearMap
from monodsm.operators import (
    MonotoneOperator,
    catalog_cubic,
    catalog_linear_fredholm,
    exact_solution,
    make_problem,
)
from monodsm.regsolve import v_sequence
from monodsm.schedule import Schedule, a_priori_n0, check_conditions

from conftest import linear_problem, schedule_for


def small_linear(delta=1e-2, seed=0):
    return make_problem(catalog_linear_fredholm(30), exact_solution("exp", 30, 2.0), delta, seed)


@pytest.fixture(scope="module")
def small():
    p = small_linear()
    return p, schedule_for(p)


@pytest.fixture(scope="module")
def small_diag(small):
    p, s = small
    n0 = a_priori_n0(s, p.delta, s.y_norm)
    rep = run(p.operator, s, p.f_delta, StoppingRule("a_priori", 2.0, 0.9, p.delta), True)
    return rep, n0


# initial guess and single steps


def test_init_u0_is_zero(small):
    p, s = small
    u0 = init_u0(p.operator, p.f_delta, s.a0)
    assert u0.shape == (p.dim,) and not u0.any()


def test_initial_guess_bounds(small):
    p, s = small
    rep = check_initial_guess(p.operator, p.f_delta, s.a0, s.lam)
    assert rep.within_data_bound
    assert rep.within_schedule_bound
    assert rep.g0 <= rep.data_bound
    assert check_initial_guess(p.operator, p.f_delta, s.a0).schedule_bound is None


def test_step_linear_lands_on_regularized_solution(small):
    p, _ = small
    A = p.operator.jacobian(None).matrix
    oracle = np.linalg.solve(A + 0.05 * np.eye(p.dim), p.f_delta)
    for u in (np.zeros(p.dim), np.random.default_rng(1).standard_normal(p.dim) * 10):
        z = dsm_step(p.operator, u, 0.05, p.f_delta)
        assert np.linalg.norm(z - oracle) <= 1e-10 * np.linalg.norm(oracle)


def test_step_scalar_cube_fixed_point():
    op = catalog_cubic(1, 1.0, matrix=[[0.0]])
    np.testing.assert_allclose(dsm_step(op, np.array([1.0]), 1.0, np.array([2.0])), [1.0])


def test_step_scalar_cube_from_zero():
    op = catalog_cubic(1, 1.0, matrix=[[0.0]])
    np.testing.assert_allclose(dsm_step(op, np.array([0.0]), 1.0, np.array([2.0])), [2.0])


@given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_step_affine_exactness_property(d, seed, a):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    A = B @ B.T
    op = MonotoneOperator(dim=d, apply=lambda u: A @ u, jacobian=lambda u: LinearMap(A))
    f, u = rng.standard_normal(d), rng.standard_normal(d)
    oracle = np.linalg.solve(A + a * np.eye(d), f)
    z = dsm_step(op, u, a, f)
    assert np.linalg.norm(z - oracle) <= 1e-9 * (np.linalg.norm(oracle) + np.linalg.norm(u))


# stopping rules


@pytest.mark.parametrize("kwargs", [dict(kind="sometimes"), dict(C1=1.0), dict(gamma=0.0),
                                    dict(gamma=1.5), dict(delta=None), dict(delta=0.0),
                                    dict(kind="a_priori", delta=None), dict(n_cap=-1)])
def test_stopping_rule_validation(kwargs):
    args = dict(kind="discrepancy", delta=1e-3)
    args.update(kwargs)
    with pytest.raises(ValueError):
        StoppingRule(**args)


def test_stopping_rule_threshold():
    assert StoppingRule(C1=2.0, gamma=1.0, delta=1e-3).threshold == pytest.approx(2e-3)
    assert StoppingRule("max_iter").threshold == -np.inf


def test_discrepancy_first_crossing_linear():
    p = linear_problem()
    s = schedule_for(p, C1=2.0, gamma=1.0)
    rule = StoppingRule("discrepancy", 2.0, 1.0, p.delta)
    rep = run(p.operator, s, p.f_delta, rule, y=p.y)
    r = rep.trace.residual
    assert rep.stop_reason is StopReason.DISCREPANCY
    assert len(r) == rep.n_delta + 1
    assert r[-1] <= 2e-3 and rep.residual_final == r[-1]
    assert np.all(r[:-1] > 2e-3)
    assert rep.n_delta <= rep.n0 + 1


def test_immediate_stop(small):
    p, s = small
    rep = run(p.operator, s, p.f_delta, StoppingRule("discrepancy", 1e6, 1.0, p.delta))
    assert rep.n_delta == 0
    assert not rep.u_final.any()


def test_max_iter_rule(small):
    p, s = small
    rep = run(p.operator, s, p.f_delta, StoppingRule("max_iter", n_cap=5))
    assert rep.stop_reason is StopReason.MAX_ITER
    assert rep.n_delta == 5 and len(rep.trace) == 6
    assert rep.error_vs_y is None and rep.n0 is None


def test_cap_before_discrepancy(small):
    p, s = small
    rep = run(p.operator, s, p.f_delta, StoppingRule("discrepancy", 2.0, 1.0, p.delta, n_cap=3))
    assert rep.stop_reason is StopReason.MAX_ITER and rep.n_delta == 3


def test_a_priori_rule_stops_after_n0(small_diag):
    rep, n0 = small_diag
    assert rep.stop_reason is StopReason.A_PRIORI
    assert rep.n_delta == n0 + 1 == rep.n0 + 1


def test_trace_matches_keep_iterates(small):
    p, s = small
    rep = run(p.operator, s, p.f_delta, StoppingRule("max_iter", n_cap=10), keep_iterates=True)
    u = np.array(rep.trace.iterates)
    assert u.shape == (11, p.dim)
    np.testing.assert_allclose(rep.trace.step_norm[:-1], np.linalg.norm(np.diff(u, axis=0), axis=1))
    assert np.isnan(rep.trace.step_norm[-1])
    np.testing.assert_allclose(rep.trace.dist_u0, np.linalg.norm(u, axis=1))
    res = [np.linalg.norm(p.operator.apply(v) - p.f_delta) for v in u]
    np.testing.assert_allclose(rep.trace.residual, res, rtol=1e-12)
    np.testing.assert_array_equal(rep.trace.n, np.arange(11))
    assert np.all(np.isnan(rep.trace.g))


def test_report_json_serializable(small):
    p, s = small
    rep = run(p.operator, s, p.f_delta, StoppingRule("discrepancy", 2.0, 0.9, p.delta), y=p.y)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["stop_reason"] == "discrepancy"
    assert len(d["u_final"]) == p.dim


def test_trace_csv_deterministic(tmp_path, small):
    p, s = small
    rule = StoppingRule("discrepancy", 2.0, 0.9, p.delta)
    for name in ("a.csv", "b.csv"):
        run(p.operator, s, p.f_delta, rule).trace.to_csv(tmp_path / name)
    a = (tmp_path / "a.csv").read_text().splitlines()
    b = (tmp_path / "b.csv").read_text().splitlines()
    assert a[0].startswith("# monodsm")
    assert a[1] == "n,a_n,residual,step_norm,g_n"
    assert a[1:] == b[1:]


def test_divergence_warning():
    # F(u) = -u/2 is not monotone; as a_n approaches 1/2 the iterates blow up
    op = MonotoneOperator(dim=1, apply=lambda u: -0.5 * u,
                          jacobian=lambda u: LinearMap([[-0.5]]))
    s = Schedule(d0=1.0, lam=1.0, c0=0.0, c1=1.0, C1=2.0, gamma=1.0, M1=0.5, y_norm=1.0,
                 b=np.log(2) / np.log(1001))
    with pytest.warns(DivergenceWarning):
        rep = run(op, s, np.array([1.0]), StoppingRule("max_iter", n_cap=1000))
    assert rep.warnings


def test_no_warning_on_healthy_run(small):
    p, s = small
    with warnings.catch_warnings():
        warnings.simplefilter("error", DivergenceWarning)
        rep = run(p.operator, s, p.f_delta, StoppingRule("discrepancy", 2.0, 0.9, p.delta))
    assert not rep.warnings


# diagnostics


def test_invariant_holds_in_diagnostics(small_diag):
    rep, n0 = small_diag
    s = schedule_for(small_linear())
    g = rep.trace.g
    assert np.all(g[: n0 + 2] < rep.trace.a[: n0 + 2] / s.lam)


def test_error_recursion_linear(small, small_diag):
    _, s = small
    rep, n0 = small_diag
    assert s.c0 == 0
    report = check_error_recursion(rep.trace, s)
    assert report.passed, report.first_failure
    assert report.n_max == n0 + 1


def test_error_recursion_with_v_records(small, small_diag):
    p, s = small
    rep, _ = small_diag
    recs = v_sequence(p.operator, s, p.f_delta, 200)
    report = check_error_recursion(rep.trace, s, v_records=recs, n_max=150)
    assert report.v_increment_ok and report.passed


def test_diagnostic_columns_match_v_sequence(small, small_diag):
    p, s = small
    rep, _ = small_diag
    recs = v_sequence(p.operator, s, p.f_delta, 20)
    np.testing.assert_allclose(rep.trace.v_norm[:21], [r.g for r in recs], rtol=1e-9)
    inc = [np.linalg.norm(b.V - a.V) for a, b in zip(recs, recs[1:])]
    np.testing.assert_allclose(rep.trace.v_increment[:20], inc, rtol=1e-6)


def test_error_recursion_detects_violation(small, small_diag):
    _, s = small
    rep, _ = small_diag
    # a million-fold lambda shrinks a_n/lambda below the observed g_n
    tight = dataclasses.replace(s, lam=s.lam * 1e6)
    assert not check_error_recursion(rep.trace, tight).invariant_ok


def test_error_recursion_requires_diagnostics(small):
    p, s = small
    rep = run(p.operator, s, p.f_delta, StoppingRule("max_iter", n_cap=3))
    with pytest.raises(ValueError, match="diagnostics"):
        check_error_recursion(rep.trace, s)


# schedule selection


def test_auto_schedule_estimates_y_norm():
    p = linear_problem()
    s, bounds = auto_schedule(p.operator, p.f_delta, p.delta, 2.0, 0.9)
    # ||V_a|| <= ||y|| + delta/a for any a
    assert 0 < s.y_norm <= np.linalg.norm(p.y) + 1e-2
    fd = np.linalg.norm(p.f_delta)
    assert check_conditions(s, fd, s.y_norm, 10**4).passed
    assert bounds.M2 <= 1e-6


def test_auto_schedule_cubic_conditions():
    p = make_problem(catalog_cubic(50, 0.25), exact_solution("exp", 50, 0.3), 1e-3, 0)
    s, bounds = auto_schedule(p.operator, p.f_delta, p.delta, 2.0, 0.9,
                              y_norm_est=float(np.linalg.norm(p.y)))
    assert bounds.M2 > 0 and s.c0 == bounds.M2 / 2
    assert check_conditions(s, np.linalg.norm(p.f_delta), 0.3, 10**4).passed


# noise-level study


def test_study_linear_three_levels():
    result = convergence_study(lambda d, seed: linear_problem(d, seed), [1e-2, 1e-3, 1e-4],
                               2.0, 0.9)
    assert result.complete
    assert [r.delta for r in result.rows] == [1e-2, 1e-3, 1e-4]
    assert result.errors_decreasing
    assert result.n_nondecreasing
    assert result.ratio_decreasing
    # on a linear problem u_{n_delta} is the regularized solution at a_{n_delta - 1}
    p = linear_problem(1e-4, 0)
    s = schedule_for(p)
    row = result.rows[-1]
    A = p.operator.jacobian(None).matrix
    V = np.linalg.solve(A + s.a(row.n_delta - 1) * np.eye(p.dim), p.f_delta)
    assert row.error == pytest.approx(np.linalg.norm(V - p.y), rel=1e-8)


def test_study_seed_robustness():
    errors = [convergence_study(lambda d, seed: linear_problem(d, seed), [1e-3], 2.0, 0.9,
                                seed=seed).rows[0].error for seed in (0, 1)]
    assert max(errors) <= 3 * min(errors)


def test_study_single_delta_has_no_verdict():
    result = convergence_study(lambda d, seed: small_linear(d, seed), [1e-2], 2.0, 0.9)
    assert len(result.rows) == 1
    assert set(result.verdicts().values()) == {None}


def test_study_validation():
    with pytest.raises(ValueError, match="decreasing"):
        convergence_study(small_linear, [1e-3, 1e-2], 2.0, 0.9)
    with pytest.raises(ValueError, match="gamma"):
        convergence_study(small_linear, [1e-2], 2.0, 1.0)
    with pytest.raises(ValueError):
        convergence_study(small_linear, [], 2.0, 0.9)


def test_study_keeps_partial_rows(tmp_path):
    def factory(delta, seed):
        if delta < 1e-2:
            raise RuntimeError("boom")
        return small_linear(delta, seed)

    result = convergence_study(factory, [1e-1, 1e-2, 1e-3], 2.0, 0.9)
    assert not result.complete
    assert len(result.rows) == 2
    assert "boom" in result.failure
    result.to_csv(tmp_path / "s.csv", stamp=False)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "delta,n_delta,error,residual,seed" and len(lines) == 3
