"""Regularized Newton iteration with a discrepancy-principle stop.

The iteration is

    u_{n+1} = u_n - (F'(u_n) + a_n I)^{-1} (F(u_n) + a_n u_n - f_delta)

with ``a_n`` from a :class:`~monodsm.schedule.Schedule` and ``u_0 = 0``.
It is run without line search or damping.  The discrepancy rule stops at
the first ``n`` with ``||F(u_n) - f_delta|| <= C1 delta**gamma``.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from array import array
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._io import write_csv
from .linalg import reg_solve
from .operators import estimate_bounds, operator_norm
from .regsolve import _damped_newton, inner_tolerance
from .schedule import Schedule, a_priori_n0, select_constants, working_radius

__all__ = [
    "DivergenceWarning",
    "ErrorRecursionReport",
    "InitialGuessReport",
    "IterationTrace",
    "RunReport",
    "StopReason",
    "StoppingRule",
    "StudyResult",
    "StudyRow",
    "auto_schedule",
    "check_error_recursion",
    "check_initial_guess",
    "convergence_study",
    "dsm_step",
    "init_u0",
    "run",
]

log = logging.getLogger(__name__)


class DivergenceWarning(RuntimeWarning):
    pass


class StopReason(str, enum.Enum):
    DISCREPANCY = "discrepancy"
    A_PRIORI = "a_priori"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class StoppingRule:
    """How :func:`run` decides to stop.

    ``discrepancy`` stops at the first residual below ``C1 delta**gamma``,
    ``a_priori`` at ``n0 + 1`` computed from ``delta`` and the schedule,
    ``max_iter`` only at ``n_cap``.  ``n_cap`` bounds every rule.
    """

    kind: str = "discrepancy"
    C1: float = 2.0
    gamma: float = 1.0
    delta: float | None = None
    n_cap: int = 10**6

    def __post_init__(self):
        if self.kind not in {r.value for r in StopReason}:
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if not self.C1 > 1:
            raise ValueError(f"C1 must exceed 1, got {self.C1!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if self.kind != "max_iter" and not (self.delta is not None and self.delta > 0):
            raise ValueError(f"the {self.kind} rule needs a positive noise level delta")
        if self.n_cap < 0:
            raise ValueError("n_cap must be nonnegative")

    @property
    def threshold(self) -> float:
        if self.delta is None:
            return -math.inf
        return self.C1 * self.delta**self.gamma


class IterationTrace:
    """Per-step record of a run, stored column-wise.

    Columns are ``a`` (``a_n``), ``residual`` (``||F(u_n) - f_delta||``),
    ``step_norm`` (``||u_{n+1} - u_n||``, nan at the last index) and
    ``dist_u0`` (``||u_n - u_0||``).  With diagnostics on, ``g``
    (``||u_n - V_n||``), ``v_norm`` (``||V_n||``) and ``v_increment``
    (``||V_{n+1} - V_n||``) are filled; otherwise they hold nan.  Row ``k``
    is iteration ``n = k``.
    """

    COLUMNS = ("a", "residual", "step_norm", "dist_u0", "g", "v_norm", "v_increment")

    def __init__(self, keep_iterates=False):
        self._cols = {name: array("d") for name in self.COLUMNS}
        self.iterates = [] if keep_iterates else None

    def __len__(self):
        return len(self._cols["a"])

    def __getattr__(self, name):
        cols = self.__dict__.get("_cols")
        if cols is not None and name in cols:
            return np.frombuffer(cols[name], dtype=float).copy()
        raise AttributeError(name)

    @property
    def n(self):
        return np.arange(len(self))

    def _append(self, a, residual, dist_u0, u=None):
        c = self._cols
        c["a"].append(a)
        c["residual"].append(residual)
        c["dist_u0"].append(dist_u0)
        for name in ("step_norm", "g", "v_norm", "v_increment"):
            c[name].append(math.nan)
        if self.iterates is not None:
            self.iterates.append(u)

    def _set(self, name, index, value):
        self._cols[name][index] = value

    def to_csv(self, path, stamp=True):
        rows = zip(range(len(self)), self._cols["a"], self._cols["residual"],
                   self._cols["step_norm"], self._cols["g"])
        write_csv(path, ["n", "a_n", "residual", "step_norm", "g_n"], rows, stamp=stamp)


@dataclass(eq=False)
class RunReport:
    n_delta: int
    u_final: np.ndarray
    residual_final: float
    error_vs_y: float | None
    stop_reason: StopReason
    trace: IterationTrace
    threshold: float
    n0: int | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_delta": self.n_delta,
            "stop_reason": self.stop_reason.value,
            "residual_final": self.residual_final,
            "error_vs_y": self.error_vs_y,
            "threshold": self.threshold,
            "n0": self.n0,
            "u_final": self.u_final.tolist(),
            "warnings": list(self.warnings),
        }


def init_u0(op, f_delta=None, a0=None) -> np.ndarray:
    """Initial guess ``u_0 = 0``.

    Zero always satisfies ``||u_0 - V_0|| <= ||F(0) - f_delta|| / a_0``; use
    :func:`check_initial_guess` to confirm numerically.
    """
    return np.zeros(op.dim)


@dataclass(frozen=True)
class InitialGuessReport:
    g0: float
    data_bound: float  # ||F(0) - f_delta|| / a0
    schedule_bound: float | None  # a0 / lambda
    within_data_bound: bool
    within_schedule_bound: bool | None


def check_initial_guess(op, f_delta, a0: float, lam: float | None = None, u0=None):
    f_delta = np.asarray(f_delta, dtype=float)
    u0 = init_u0(op) if u0 is None else np.asarray(u0, dtype=float)
    V0 = _damped_newton(op, a0, f_delta, np.zeros(op.dim), inner_tolerance(f_delta))[0]
    g0 = float(np.linalg.norm(u0 - V0))
    bound = float(np.linalg.norm(op.apply(np.zeros(op.dim)) - f_delta)) / a0
    sched = None if lam is None else a0 / lam
    return InitialGuessReport(
        g0=g0, data_bound=bound, schedule_bound=sched,
        within_data_bound=g0 <= bound * (1 + 1e-12),
        within_schedule_bound=None if sched is None else g0 <= sched,
    )


def dsm_step(op, u_n, a_n: float, f_delta) -> np.ndarray:
    """One step: ``u_n - (F'(u_n) + a_n I)^{-1} (F(u_n) + a_n u_n - f_delta)``."""
    u_n = np.asarray(u_n, dtype=float)
    w = op.apply(u_n) + a_n * u_n - f_delta
    return u_n - reg_solve(op.jacobian(u_n), a_n, w)


def run(op, s: Schedule, f_delta, rule: StoppingRule, diagnostics: bool = False, *,
        y=None, u0=None, keep_iterates: bool = False) -> RunReport:
    """Iterate from ``u_0`` until `rule` fires.

    Parameters
    ----------
    op : MonotoneOperator
    s : Schedule
    f_delta : array
        Noisy data.
    rule : StoppingRule
    diagnostics : bool
        Also solve for ``V_n`` at every step and record ``||u_n - V_n||``,
        ``||V_n||`` and ``||V_{n+1} - V_n||`` in the trace.  Roughly doubles
        the cost.
    y : array, optional
        Exact solution; fills ``error_vs_y``.
    u0 : array, optional
        Initial guess, default :func:`init_u0`.
    keep_iterates : bool
        Keep every ``u_n`` in ``trace.iterates``.

    Returns
    -------
    RunReport
        ``stop_reason`` is ``max_iter`` when ``n_cap`` is hit first; that is
        a normal return, not an error.
    """
    f_delta = np.asarray(f_delta, dtype=float)
    u = init_u0(op, f_delta, s.a0) if u0 is None else np.array(u0, dtype=float)
    start = u.copy()
    threshold = rule.threshold
    n_stop = rule.n_cap
    n0 = None
    if rule.delta is not None:
        try:
            n0 = a_priori_n0(s, rule.delta, s.y_norm)
        except ValueError:
            if rule.kind == "a_priori":
                raise
    if rule.kind == "a_priori":
        n_stop = min(n_stop, n0 + 1)
    check_residual = rule.kind == "discrepancy"

    trace = IterationTrace(keep_iterates)
    cols = trace._cols
    col_a, col_res, col_dist, col_step = cols["a"], cols["residual"], cols["dist_u0"], cols["step_norm"]
    col_g, col_vn, col_vi = cols["g"], cols["v_norm"], cols["v_increment"]
    keep = trace.iterates
    nan = math.nan

    tol_inner = inner_tolerance(f_delta)
    V_prev = None
    apply, jacobian = op.apply, op.jacobian
    sqrt = math.sqrt
    issued = []
    r0 = None
    growth = 0
    r_prev = None
    n = 0
    while True:
        a_n = s.d0 / (s.d + n) ** s.b
        Fu = apply(u)
        diff = Fu - f_delta
        r = sqrt(diff @ diff)
        du = u - start
        col_a.append(a_n)
        col_res.append(r)
        col_dist.append(sqrt(du @ du))
        col_step.append(nan)
        if diagnostics:
            V = _damped_newton(op, a_n, f_delta, u if V_prev is None else V_prev, tol_inner)[0]
            dz = u - V
            col_g.append(sqrt(dz @ dz))
            col_vn.append(sqrt(V @ V))
            col_vi.append(nan)
            if V_prev is not None:
                dv = V - V_prev
                col_vi[n - 1] = sqrt(dv @ dv)
            V_prev = V
        else:
            col_g.append(nan)
            col_vn.append(nan)
            col_vi.append(nan)
        if keep is not None:
            keep.append(u.copy())

        if check_residual and r <= threshold:
            reason = StopReason.DISCREPANCY
            break
        if n >= n_stop:
            reason = StopReason.A_PRIORI if (rule.kind == "a_priori" and n == n0 + 1) \
                else StopReason.MAX_ITER
            break

        if r0 is None:
            r0 = r
        elif r > 10.0 * r0 and r > r_prev:
            growth += 1
            if growth == 10 and not issued:
                msg = (f"residual grew for 10 consecutive steps beyond 10x its initial "
                       f"value (n={n}, residual {r:.3e}); the schedule conditions are "
                       f"probably violated")
                warnings.warn(msg, DivergenceWarning, stacklevel=2)
                issued.append(msg)
        else:
            growth = 0
        r_prev = r

        z = reg_solve(jacobian(u), a_n, diff + a_n * u)
        col_step[n] = sqrt(z @ z)
        u = u - z
        n += 1

    error = None if y is None else float(np.linalg.norm(u - np.asarray(y, dtype=float)))
    log.debug("run stopped at n=%d (%s), residual %.3e", n, reason.value, r)
    return RunReport(
        n_delta=n, u_final=u, residual_final=r, error_vs_y=error, stop_reason=reason,
        trace=trace, threshold=threshold, n0=n0, warnings=issued,
    )


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class ErrorRecursionReport:
    n_max: int
    v_increment_ok: bool
    recursion_ok: bool
    invariant_ok: bool  # g_n < a_n / lambda
    first_failure: dict
    worst_margin: dict

    @property
    def passed(self):
        return self.v_increment_ok and self.recursion_ok and self.invariant_ok


def _first_bad(ok):
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else None


def check_error_recursion(trace: IterationTrace, s: Schedule, v_records=None,
                          n_max: int | None = None, tol: float | None = None):
    """Check the per-step error bounds on a diagnostics trace.

    For ``n <= n_max``:

    * ``||V_n - V_{n+1}|| <= (a_n - a_{n+1}) / a_{n+1} * ||V_n|| + tol``
    * ``g_{n+1} <= c0 g_n**2 / a_n + (a_n - a_{n+1}) / a_{n+1} * c1 + tol``
    * ``g_n < a_n / lambda``

    ``V`` norms come from `v_records` when given, else from the trace.
    `n_max` defaults to the last traced index; `tol` to ``1e-8 (1 + g_0)``.
    """
    g = trace.g
    if len(g) == 0 or np.isnan(g[0]):
        raise ValueError("trace was not recorded with diagnostics")
    last = len(g) - 1
    n_max = last if n_max is None else min(n_max, last)
    if tol is None:
        tol = 1e-8 * (1.0 + g[0])

    n = np.arange(n_max + 1)
    a = s.a(n)
    a_next = s.a(n + 1)
    jump = (a - a_next) / a_next

    if v_records is not None:
        recs = {r.n: r for r in v_records}
        span = [k for k in n if k in recs and k + 1 in recs]
        v_norm = np.array([recs[k].g for k in span])
        v_inc = np.array([np.linalg.norm(recs[k + 1].V - recs[k].V) for k in span])
        inc_ok = v_inc <= jump[span] * v_norm + tol
    else:
        v_norm = trace.v_norm[: n_max + 1]
        v_inc = trace.v_increment[: n_max + 1]
        valid = ~np.isnan(v_inc)
        inc_ok = np.where(valid, v_inc <= jump * v_norm + tol, True)

    steps = n[:-1] if n_max == last else n
    g_next = g[steps + 1]
    rec_rhs = s.c0 * g[steps] ** 2 / a[steps] + jump[steps] * s.c1
    rec_ok = g_next <= rec_rhs + tol
    inv_ok = g[: n_max + 1] < a / s.lam

    return ErrorRecursionReport(
        n_max=int(n_max),
        v_increment_ok=bool(np.all(inc_ok)),
        recursion_ok=bool(np.all(rec_ok)),
        invariant_ok=bool(np.all(inv_ok)),
        first_failure={"v_increment": _first_bad(np.asarray(inc_ok)),
                       "recursion": _first_bad(rec_ok),
                       "invariant": _first_bad(inv_ok)},
        worst_margin={
            "recursion": float(np.min(rec_rhs + tol - g_next)) if steps.size else math.inf,
            "invariant": float(np.min(a / s.lam - g[: n_max + 1])),
        },
    )


# ---------------------------------------------------------------------------
# schedule selection and the noise-level study


def auto_schedule(op, f_delta, delta: float | None, C1: float, gamma: float, *,
                  y_norm_est: float | None = None, u0=None, samples: int = 16,
                  seed: int = 0, safety: float = 2.0, d: float = 1.0, b: float = 1.0):
    """Estimate everything :func:`select_constants` needs and call it.

    Without `y_norm_est`, ``||y||`` is estimated by ``||V_a||`` at the trial
    shift ``a = ||F'(u0)|| sqrt(delta)`` (``1e-3 ||F'(u0)||`` when delta is
    unknown); for noise-free data ``||V_a|| <= ||y||``.  Operator bounds
    are sampled on ``B(u0, R)`` with ``R`` from
    :func:`~monodsm.schedule.working_radius`.

    Returns ``(schedule, bounds)``.
    """
    f_delta = np.asarray(f_delta, dtype=float)
    u0 = init_u0(op) if u0 is None else np.asarray(u0, dtype=float)
    if y_norm_est is None:
        j_norm = max(operator_norm(op.jacobian(u0))[0], 1e-12)
        a_trial = j_norm * (math.sqrt(delta) if delta else 1e-3)
        V = _damped_newton(op, a_trial, f_delta, np.zeros(op.dim), inner_tolerance(f_delta))[0]
        y_norm_est = float(np.linalg.norm(V))
        if y_norm_est == 0.0:
            raise ValueError("estimated ||y|| is zero; supply y_norm_est")
    R = working_radius(y_norm_est, C1, float(np.linalg.norm(u0)))
    bounds = estimate_bounds(op, u0, R, samples, seed=seed)
    F0_res = float(np.linalg.norm(op.apply(np.zeros(op.dim)) - f_delta))
    s = select_constants(bounds, y_norm_est, F0_res, C1, gamma, safety=safety, d=d, b=b)
    return s, bounds


@dataclass(frozen=True)
class StudyRow:
    delta: float
    seed: int
    n_delta: int
    error: float
    residual: float
    delta_over_a: float  # delta / a_{n_delta}
    a0_over_lambda: float
    stop_reason: str


@dataclass
class StudyResult:
    rows: list
    complete: bool
    failure: str | None = None

    @property
    def errors_decreasing(self):
        e = [r.error for r in self.rows]
        return None if len(e) < 2 else all(b < a for a, b in zip(e, e[1:]))

    @property
    def n_nondecreasing(self):
        k = [r.n_delta for r in self.rows]
        return None if len(k) < 2 else all(b >= a for a, b in zip(k, k[1:]))

    @property
    def ratio_decreasing(self):
        q = [r.delta_over_a for r in self.rows]
        return None if len(q) < 2 else all(b < a for a, b in zip(q, q[1:]))

    def verdicts(self):
        return {"error_decreasing": self.errors_decreasing,
                "n_delta_nondecreasing": self.n_nondecreasing,
                "delta_over_a_decreasing": self.ratio_decreasing}

    def to_csv(self, path, stamp=True):
        write_csv(path, ["delta", "n_delta", "error", "residual", "seed"],
                  ([r.delta, r.n_delta, r.error, r.residual, r.seed] for r in self.rows),
                  stamp=stamp)


def convergence_study(problem_factory: Callable, deltas, C1: float, gamma: float, *,
                      schedule_policy: Callable | None = None, seed: int = 0,
                      n_cap: int | None = None) -> StudyResult:
    """Run the discrepancy-stopped iteration for a decreasing list of noise levels.

    Parameters
    ----------
    problem_factory : callable
        ``problem_factory(delta, seed) -> MonotoneProblem``.
    deltas : sequence of float
        Strictly decreasing noise levels.
    gamma : float
        Must lie strictly inside (0, 1).
    schedule_policy : callable, optional
        ``schedule_policy(problem, C1, gamma) -> Schedule``.  The default
        calls :func:`auto_schedule` with the exact ``||y||``.
    n_cap : int, optional
        Iteration cap per row; default ``n0 + 1``, which the discrepancy
        rule never needs to exceed when the schedule conditions hold.

    A failing row stops the study; completed rows are kept and
    ``complete`` is False.
    """
    deltas = [float(x) for x in deltas]
    if not deltas:
        raise ValueError("deltas must be nonempty")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma!r}")
    if schedule_policy is None:
        def schedule_policy(problem, C1, gamma):
            return auto_schedule(problem.operator, problem.f_delta, problem.delta, C1, gamma,
                                 y_norm_est=float(np.linalg.norm(problem.y)))[0]

    rows = []
    for delta in deltas:
        try:
            problem = problem_factory(delta, seed)
            s = schedule_policy(problem, C1, gamma)
            cap = n_cap if n_cap is not None else a_priori_n0(s, delta, s.y_norm) + 1
            rule = StoppingRule("discrepancy", C1=C1, gamma=gamma, delta=delta, n_cap=cap)
            rep = run(problem.operator, s, problem.f_delta, rule, y=problem.y)
        except Exception as exc:  # noqa: BLE001 - reported with the partial table
            log.error("study row delta=%g failed: %s", delta, exc)
            return StudyResult(rows, complete=False, failure=f"delta={delta:g}: {exc}")
        rows.append(StudyRow(
            delta=delta, seed=seed, n_delta=rep.n_delta, error=rep.error_vs_y,
            residual=rep.residual_final, delta_over_a=delta / s.a(rep.n_delta),
            a0_over_lambda=s.a0 / s.lam, stop_reason=rep.stop_reason.value,
        ))
        log.info("delta=%g n_delta=%d error=%.4g", delta, rep.n_delta, rep.error_vs_y)
    return StudyResult(rows, complete=True)
