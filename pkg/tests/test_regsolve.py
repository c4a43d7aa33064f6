import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monodsm.linalg import LinearMap
from monodsm.operators import MonotoneOperator, catalog_cubic
from monodsm.regsolve import (
    RegularizedSolveError,
    VSequenceRecord,
    check_large_a_limit,
    check_v_sequence,
    find_n_delta_V,
    records_to_csv,
    solve_regularized,
    v_sequence,
)

from conftest import DELTA, linear_problem, schedule_for


def identity_scalar():
    return MonotoneOperator(dim=1, apply=lambda u: u.copy(),
                            jacobian=lambda u: LinearMap([[1.0]], reusable=True), linear=True)


def record(n, h):
    return VSequenceRecord(n=n, a_n=1.0, V=None, h=h, g=h, newton_iters=0)


@pytest.fixture(scope="module")
def linear_records():
    p = linear_problem()
    s = schedule_for(p)
    return p, s, v_sequence(p.operator, s, p.f_delta, 60)


# solve_regularized


def test_scalar_identity():
    np.testing.assert_allclose(solve_regularized(identity_scalar(), 1.0, [2.0]), [1.0])


def test_scalar_cube():
    op = catalog_cubic(1, 1.0, matrix=[[0.0]])
    np.testing.assert_allclose(solve_regularized(op, 1.0, np.array([2.0])), [1.0], rtol=1e-12)


@pytest.mark.parametrize("a", [1e-3, 1.0, 1e3])
def test_linear_matches_dense_solve(a):
    p = linear_problem()
    A = p.operator.jacobian(None).matrix
    oracle = np.linalg.solve(A + a * np.eye(p.dim), p.f_delta)
    V = solve_regularized(p.operator, a, p.f_delta)
    assert np.linalg.norm(V - oracle) <= 1e-10 * np.linalg.norm(oracle)


def test_warm_start_gives_same_solution():
    op = catalog_cubic(20, 1.0)
    f = np.linspace(-1, 2, 20)
    cold = solve_regularized(op, 0.01, f)
    warm = solve_regularized(op, 0.01, f, warm_start=cold + 0.1)
    np.testing.assert_allclose(warm, cold, atol=1e-10)


def test_rejects_nonpositive_a():
    with pytest.raises(ValueError):
        solve_regularized(identity_scalar(), 0.0, [1.0])


def test_non_monotone_operator_fails_cleanly():
    # F(u) = -u is anti-monotone and F'(u) + 1 I is the zero matrix
    op = MonotoneOperator(dim=2, apply=lambda u: -u, jacobian=lambda u: LinearMap(-np.eye(2)))
    with pytest.raises(np.linalg.LinAlgError):
        solve_regularized(op, 1.0, np.ones(2))


def test_wrong_jacobian_exhausts_halvings():
    # a Jacobian with the wrong sign gives an ascent direction every time
    op = MonotoneOperator(dim=1, apply=lambda u: u.copy(), jacobian=lambda u: LinearMap([[-1.5]]))
    with pytest.raises(RegularizedSolveError, match="halvings") as info:
        solve_regularized(op, 1.0, np.array([1.0]))
    assert info.value.a == 1.0


@given(st.integers(2, 12), st.floats(0, 2), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_regularized_residual_property(d, c, a, seed):
    op = catalog_cubic(d, c)
    f = np.random.default_rng(seed).standard_normal(d)
    V = solve_regularized(op, a, f)
    assert np.linalg.norm(op.apply(V) + a * V - f) <= 1e-11 * (1 + np.linalg.norm(f))
    # monotonicity gives ||V_a|| <= ||f - F(0)|| / a
    assert np.linalg.norm(V) <= np.linalg.norm(f) / a * (1 + 1e-9)


# v_sequence


def test_v_sequence_linear_monotone(linear_records):
    p, s, recs = linear_records
    assert [r.n for r in recs] == list(range(61))
    h = np.array([r.h for r in recs])
    g = np.array([r.g for r in recs])
    assert np.all(np.diff(h) <= 1e-8 * (1 + h[0]))
    assert np.all(np.diff(g) >= -1e-8 * (1 + h[0]))


def test_v_sequence_identity(linear_records):
    _, _, recs = linear_records
    for r in recs:
        assert abs(r.h - r.a_n * r.g) <= 1e-8 * r.h


def test_v_sequence_norm_bound(linear_records):
    p, _, recs = linear_records
    y_norm = np.linalg.norm(p.y)
    assert all(r.g <= y_norm + DELTA / r.a_n + 1e-8 for r in recs)


def test_v_sequence_matches_dense(linear_records):
    p, s, recs = linear_records
    A = p.operator.jacobian(None).matrix
    for r in recs[::10]:
        oracle = np.linalg.solve(A + r.a_n * np.eye(p.dim), p.f_delta)
        assert np.linalg.norm(r.V - oracle) <= 1e-10 * np.linalg.norm(oracle)


def test_v_sequence_without_vectors(linear_records):
    p, s, recs = linear_records
    light = v_sequence(p.operator, s, p.f_delta, 5, keep_vectors=False)
    assert all(r.V is None for r in light)
    assert [r.h for r in light] == [r.h for r in recs[:6]]


def test_v_sequence_requires_steps(linear_records):
    p, s, _ = linear_records
    with pytest.raises(ValueError):
        v_sequence(p.operator, s, p.f_delta, 0)


def test_check_v_sequence_report(linear_records):
    p, _, recs = linear_records
    F0 = np.linalg.norm(p.f_delta)
    rep = check_v_sequence(recs, DELTA, np.linalg.norm(p.y), F0)
    assert rep.passed
    assert rep.worst_monotonicity_slack <= 0


def test_check_v_sequence_flags_growth():
    recs = [VSequenceRecord(n, 1.0 / (n + 1), None, h, h * (n + 1), 0)
            for n, h in enumerate([1.0, 0.5, 0.7])]
    rep = check_v_sequence(recs, 0.0, 10.0, 1.0)
    assert not rep.residual_nonincreasing
    assert rep.residual_identity


# find_n_delta_V


def test_find_crossing():
    d = 1e-3
    recs = [record(n, h * d) for n, h in enumerate([5, 3, 1.5, 0.5])]
    assert find_n_delta_V(recs, 2.0, d) == 2


def test_find_crossing_immediate():
    assert find_n_delta_V([record(0, 1e-4), record(1, 1e-5)], 2.0, 1e-3) == 0


def test_find_crossing_missing():
    with pytest.raises(ValueError, match="extend N"):
        find_n_delta_V([record(0, 1.0)], 2.0, 1e-3)
    with pytest.raises(ValueError):
        find_n_delta_V([], 2.0, 1e-3)


def test_find_crossing_linear_brute_force():
    p = linear_problem()
    s = schedule_for(p)
    C = 1.5
    # long enough that h crosses C delta; n0 bounds the crossing
    N = 40000
    recs = v_sequence(p.operator, s, p.f_delta, N, keep_vectors=False)
    brute = next(r.n for r in recs if r.h <= C * DELTA)
    assert find_n_delta_V(recs, C, DELTA) == brute
    assert all(r.h > C * DELTA for r in recs[:brute])


@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.floats(1.01, 5),
       st.floats(1e-3, 1))
def test_find_crossing_property(hs, C, delta):
    recs = [record(n, h) for n, h in enumerate(hs)]
    expected = next((n for n, h in enumerate(hs) if h <= C * delta), None)
    if expected is None:
        with pytest.raises(ValueError):
            find_n_delta_V(recs, C, delta)
    else:
        assert find_n_delta_V(recs, C, delta) == expected


# large-a limit


def test_large_a_scalar_closed_form():
    op = identity_scalar()
    rep = check_large_a_limit(op, np.array([1.0]))
    a = np.array(rep.a_values)
    np.testing.assert_allclose(rep.v_norms, 1 / (1 + a), rtol=1e-12)
    np.testing.assert_allclose(rep.residuals, a / (1 + a), rtol=1e-12)
    assert rep.passed


def test_large_a_cubic():
    op = catalog_cubic(50, 0.25)
    f = op.apply(np.full(50, 0.04)) + 1e-3
    rep = check_large_a_limit(op, f)
    F0 = np.linalg.norm(f)
    assert rep.v_norms[-1] <= F0 / 1e6
    assert rep.passed


def test_large_a_grid_validation():
    op = identity_scalar()
    with pytest.raises(ValueError):
        check_large_a_limit(op, np.array([1.0]), a_values=[1.0, 10.0])
    with pytest.raises(ValueError):
        check_large_a_limit(op, np.array([1.0]), a_values=[1e6, 1.0, 1e7])


def test_records_csv(tmp_path, linear_records):
    _, _, recs = linear_records
    records_to_csv(recs[:3], tmp_path / "v.csv", stamp=False)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "n,a_n,h_n,g_n,newton_iters"
    assert len(lines) == 4
