"""The regularized equation ``F(V) + a V = f_delta`` and its solution path.

For monotone ``F`` and ``a > 0`` the regularized equation has exactly one
solution ``V_a``.  Along a schedule ``a_n`` the residuals
``h_n = ||F(V_n) - f_delta|| = a_n ||V_n||`` shrink while the norms
``||V_n||`` grow; the checks in this module measure those facts on
computed solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from .linalg import reg_solve

__all__ = [
    "LargeShiftReport",
    "RegularizedSolveError",
    "VSequenceRecord",
    "VSequenceReport",
    "check_large_a_limit",
    "check_v_sequence",
    "find_n_delta_V",
    "records_to_csv",
    "solve_regularized",
    "v_sequence",
]

DEFAULT_A_GRID = tuple(10.0**k for k in range(7))
MAX_NEWTON = 200
MAX_HALVINGS = 60


class RegularizedSolveError(RuntimeError):
    """Damped Newton failed on ``F(V) + a V = f_delta``.

    Failure means the operator is not monotone or not differentiable
    where it was evaluated.  ``n`` is set when the failure happened
    inside :func:`v_sequence`.
    """

    def __init__(self, message, a, n=None):
        super().__init__(message if n is None else f"n={n}: {message}")
        self.a = a
        self.n = n


def inner_tolerance(f_delta) -> float:
    return 1e-11 * (1.0 + float(np.linalg.norm(f_delta)))


def _damped_newton(op, a, f_delta, V, tol, max_iter=MAX_NEWTON):
    Fv = op.apply(V)
    res = Fv + a * V - f_delta
    r_norm = float(np.linalg.norm(res))
    for it in range(max_iter + 1):
        if r_norm <= tol:
            return V, it, r_norm
        if it == max_iter:
            break
        step = reg_solve(op.jacobian(V), a, -res)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = V + t * step
            trial_res = op.apply(trial) + a * trial - f_delta
            trial_norm = float(np.linalg.norm(trial_res))
            if trial_norm < r_norm:
                break
            t *= 0.5
        else:
            raise RegularizedSolveError(
                f"no residual decrease after {MAX_HALVINGS} halvings "
                f"(a={a:g}, residual {r_norm:.3e}, tolerance {tol:.3e})", a)
        V, res, r_norm = trial, trial_res, trial_norm
    raise RegularizedSolveError(
        f"Newton iteration cap {max_iter} exceeded (a={a:g}, residual {r_norm:.3e})", a)


def solve_regularized(op, a: float, f_delta, warm_start=None, tol: float | None = None):
    """Solve ``F(V) + a V = f_delta`` by damped Newton.

    Each step solves ``(F'(V) + a I) s = -(F(V) + a V - f_delta)`` and halves
    the step length until the residual norm decreases.  Iteration stops at
    ``||F(V) + a V - f_delta|| <= tol``, by default
    ``1e-11 (1 + ||f_delta||)``.

    Parameters
    ----------
    warm_start : array, optional
        Initial guess; zero when omitted.

    Raises
    ------
    RegularizedSolveError
        After 60 unsuccessful halvings or 200 Newton steps.
    """
    if not a > 0:
        raise ValueError(f"a must be positive, got {a!r}")
    f_delta = np.asarray(f_delta, dtype=float)
    V = np.zeros(op.dim) if warm_start is None else np.array(warm_start, dtype=float)
    if tol is None:
        tol = inner_tolerance(f_delta)
    return _damped_newton(op, a, f_delta, V, tol)[0]


@dataclass(frozen=True, eq=False)
class VSequenceRecord:
    n: int
    a_n: float
    V: np.ndarray | None
    h: float  # ||F(V_n) - f_delta||
    g: float  # ||V_n||
    newton_iters: int


def v_sequence(op, s, f_delta, N: int, keep_vectors: bool = True) -> list[VSequenceRecord]:
    """Regularized solutions ``V_n`` at ``a_n`` for ``n = 0..N``.

    Each solve is warm-started from the previous ``V``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    f_delta = np.asarray(f_delta, dtype=float)
    tol = inner_tolerance(f_delta)
    V = np.zeros(op.dim)
    records = []
    for n in range(N + 1):
        a_n = s.a(n)
        try:
            V, iters, _ = _damped_newton(op, a_n, f_delta, V, tol)
        except RegularizedSolveError as exc:
            raise RegularizedSolveError(str(exc), a_n, n) from exc
        records.append(VSequenceRecord(
            n=n, a_n=a_n, V=V if keep_vectors else None,
            h=float(np.linalg.norm(op.apply(V) - f_delta)),
            g=float(np.linalg.norm(V)), newton_iters=iters,
        ))
    return records


def find_n_delta_V(records, C: float, delta: float) -> int:
    """First ``n`` whose residual ``h_n`` is at most ``C delta``.

    Raises
    ------
    ValueError
        If no record crosses; extend the sequence.
    """
    if not records:
        raise ValueError("records must be nonempty")
    threshold = C * delta
    for rec in records:
        if rec.h <= threshold:
            return rec.n
    raise ValueError(
        f"no crossing of C*delta = {threshold:.3e} within n <= {records[-1].n}; "
        f"extend N (last residual {records[-1].h:.3e})"
    )


@dataclass(frozen=True)
class VSequenceReport:
    residual_nonincreasing: bool
    norm_nondecreasing: bool
    residual_identity: bool  # h_n == a_n ||V_n||
    norm_bound: bool  # ||V_n|| <= ||y|| + delta / a_n
    residual_bound: bool  # h_n <= ||F(0) - f_delta||
    worst_monotonicity_slack: float

    @property
    def passed(self):
        return (self.residual_nonincreasing and self.norm_nondecreasing and
                self.residual_identity and self.norm_bound and self.residual_bound)


def check_v_sequence(records, delta: float, y_norm: float, F0_residual: float,
                     slack: float = 1e-8) -> VSequenceReport:
    """Check the structural facts every regularized solution path obeys.

    `slack` is scaled by ``1 + h_0`` for the monotonicity tests and used
    as an absolute allowance on the norm bound.
    """
    a = np.array([r.a_n for r in records])
    h = np.array([r.h for r in records])
    g = np.array([r.g for r in records])
    mono_slack = slack * (1.0 + h[0])
    dh = np.diff(h)
    dg = np.diff(g)
    worst = float(max(dh.max(initial=-np.inf), -dg.min(initial=np.inf)))
    identity = np.abs(h - a * g) <= slack * np.maximum(h, 1e-300)
    return VSequenceReport(
        residual_nonincreasing=bool(np.all(dh <= mono_slack)),
        norm_nondecreasing=bool(np.all(dg >= -mono_slack)),
        residual_identity=bool(np.all(identity)),
        norm_bound=bool(np.all(g <= y_norm + delta / a + slack)),
        residual_bound=bool(np.all(h <= F0_residual + mono_slack)),
        worst_monotonicity_slack=worst,
    )


@dataclass(frozen=True)
class LargeShiftReport:
    a_values: tuple
    v_norms: tuple
    residuals: tuple
    F0_residual: float
    norm_bound_ok: bool  # ||V_a|| <= ||f_delta - F(0)|| / a at every a
    limit_gap: float  # relative gap to ||F(0) - f_delta|| at the largest a
    limit_ok: bool
    residual_nondecreasing: bool

    @property
    def passed(self):
        return self.norm_bound_ok and self.limit_ok and self.residual_nondecreasing


def check_large_a_limit(op, f_delta, a_values=DEFAULT_A_GRID, gap_tol: float = 1e-3,
                        rtol: float = 1e-12) -> LargeShiftReport:
    """Behaviour of ``V_a`` as ``a`` grows.

    Checks ``||V_a|| <= ||f_delta - F(0)|| / a`` at each ``a`` (with relative
    rounding allowance `rtol`), that ``||F(V_a) - f_delta||`` is
    nondecreasing in ``a``, and that at the largest ``a`` it is within
    relative `gap_tol` of ``||F(0) - f_delta||``.
    """
    a_values = tuple(float(a) for a in a_values)
    if any(b <= a for a, b in zip(a_values, a_values[1:])):
        raise ValueError("a_values must be strictly increasing")
    if a_values[-1] < 1e6:
        raise ValueError("largest a must be at least 1e6")
    f_delta = np.asarray(f_delta, dtype=float)
    F0_res = float(np.linalg.norm(op.apply(np.zeros(op.dim)) - f_delta))
    tol = inner_tolerance(f_delta)
    norms, residuals = [], []
    for a in a_values:
        V = _damped_newton(op, a, f_delta, np.zeros(op.dim), tol)[0]
        norms.append(float(np.linalg.norm(V)))
        residuals.append(float(np.linalg.norm(op.apply(V) - f_delta)))
    bound_ok = all(v <= (F0_res / a) * (1.0 + rtol) for v, a in zip(norms, a_values))
    gap = abs(residuals[-1] - F0_res) / F0_res if F0_res > 0 else 0.0
    nondecreasing = all(r2 >= r1 * (1.0 - rtol) for r1, r2 in zip(residuals, residuals[1:]))
    return LargeShiftReport(
        a_values=a_values, v_norms=tuple(norms), residuals=tuple(residuals),
        F0_residual=F0_res, norm_bound_ok=bound_ok, limit_gap=gap,
        limit_ok=gap < gap_tol, residual_nondecreasing=nondecreasing,
    )


def records_to_csv(records, path, stamp=True):
    write_csv(path, ["n", "a_n", "h_n", "g_n", "newton_iters"],
              ([r.n, r.a_n, r.h, r.g, r.newton_iters] for r in records), stamp=stamp)
