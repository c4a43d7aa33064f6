"""Regularization schedule ``a_n = d0 / (d + n)**b`` and its constants.

:func:`select_constants` turns operator bound estimates into a schedule
whose five admissibility conditions hold by construction;
:func:`check_conditions` evaluates them on a finite horizon.  The five
conditions, in the order reported, are

``ratio``
    ``a_n <= 2 a_{n+1}``
``initial_data``
    ``||f_delta - F(0)|| <= a_0**2 / lambda``
``lambda_bound``
    ``M1 / lambda <= ||y||``
``increment``
    ``(a_n - a_{n+1}) / a_{n+1}**2 <= 1 / (2 c1 lambda)``
``recursion``
    ``c0 a_n / lambda**2 + c1 (a_n - a_{n+1}) / a_{n+1} <= a_{n+1} / lambda``
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CONDITION_NAMES",
    "ConditionReport",
    "ConditionResult",
    "Schedule",
    "a_of",
    "a_priori_n0",
    "check_conditions",
    "schedule_from_dict",
    "schedule_to_dict",
    "select_constants",
    "working_radius",
]

CONDITION_NAMES = ("ratio", "initial_data", "lambda_bound", "increment", "recursion")
N0_CAP = 10**8
TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Schedule:
    """Schedule ``a_n = d0 / (d + n)**b`` plus the constants that go with it.

    ``C`` is not stored; it is always ``(C1 + 1) / 2``.  ``M1`` and
    ``y_norm`` record the estimates the constants were derived from.
    """

    d0: float
    lam: float
    c0: float
    c1: float
    C1: float
    gamma: float
    M1: float
    y_norm: float
    d: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        for name in ("d0", "lam", "c1", "y_norm"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("c0", "M1"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be nonnegative and finite, got {value!r}")
        if not self.d >= 1:
            raise ValueError(f"d must be >= 1, got {self.d!r}")
        if not 0 < self.b <= 1:
            raise ValueError(f"b must lie in (0, 1], got {self.b!r}")
        if not self.C1 > 1:
            raise ValueError(f"C1 must exceed 1, got {self.C1!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma!r}")

    @property
    def C(self) -> float:
        return (self.C1 + 1.0) / 2.0

    @property
    def a0(self) -> float:
        return self.a(0)

    def a(self, n):
        """``a_n``; accepts an integer or an integer array."""
        if np.ndim(n):
            return self.d0 / (self.d + np.asarray(n, dtype=float)) ** self.b
        return self.d0 / (self.d + n) ** self.b

    def scaled(self, kappa: float) -> Schedule:
        """Replace ``(a_n, lambda)`` by ``(kappa a_n, kappa lambda)``."""
        return dataclasses.replace(self, d0=self.d0 * kappa, lam=self.lam * kappa)


def a_of(s: Schedule, n: int) -> float:
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    return s.a(n)


def _finite(name, value):
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


def select_constants(bounds, y_norm_est: float, f_delta_minus_F0_norm: float, C1: float,
                     gamma: float, *, safety: float = 2.0, d: float = 1.0,
                     b: float = 1.0) -> Schedule:
    """Choose ``lambda`` and ``d0`` so that all five conditions hold.

    ``lambda = kappa M1 / ||y||`` with ``kappa = max(1, 4 c0 ||y|| / M1)``
    and ``a_0 = safety * max(sqrt(lambda ||f_delta - F(0)||), 4 c1 lambda)``.
    The ratio ``a_0 / lambda`` then stays bounded as the noise level goes
    to zero, independent of how large ``M1`` is.

    Parameters
    ----------
    bounds : OperatorBounds
        Only ``M1`` and ``M2`` are used.  ``M1 = 0`` is replaced by the
        smallest positive float.
    y_norm_est : float
        Estimate of the norm of the minimal-norm solution.
    f_delta_minus_F0_norm : float
        ``||f_delta - F(0)||``.
    """
    M1, M2 = float(bounds.M1), float(bounds.M2)
    for name, value in [("M1", M1), ("M2", M2), ("y_norm_est", y_norm_est),
                        ("f_delta_minus_F0_norm", f_delta_minus_F0_norm),
                        ("C1", C1), ("gamma", gamma), ("safety", safety)]:
        _finite(name, value)
    if not y_norm_est > 0:
        raise ValueError(f"y_norm_est must be positive, got {y_norm_est!r}")
    if not C1 > 1:
        raise ValueError(f"C1 must exceed 1, got {C1!r}")
    if safety < 1:
        raise ValueError(f"safety factor must be >= 1, got {safety!r}")
    M1 = max(M1, TINY)

    c0 = M2 / 2.0
    C = (C1 + 1.0) / 2.0
    c1 = y_norm_est * (1.0 + 2.0 / (C - 1.0))
    kappa = max(1.0, 4.0 * c0 * y_norm_est / M1)
    lam = kappa * M1 / y_norm_est
    a0 = safety * max(math.sqrt(lam * f_delta_minus_F0_norm), 4.0 * c1 * lam)
    return Schedule(d0=a0 * d**b, lam=lam, c0=c0, c1=c1, C1=float(C1), gamma=float(gamma),
                    M1=M1, y_norm=float(y_norm_est), d=float(d), b=float(b))


def working_radius(y_norm: float, C1: float, u0_norm: float = 0.0) -> float:
    """Radius of the ball on which operator bounds are estimated.

    Twice the bound ``||y|| (1 + 2 / (C - 1))`` on the regularized
    solutions along the schedule, offset by ``||u0||``.
    """
    C = (C1 + 1.0) / 2.0
    return u0_norm + 2.0 * y_norm * (1.0 + 2.0 / (C - 1.0))


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    first_violation: int | None
    worst_margin: float  # min over n of (rhs - lhs) / |rhs|


@dataclass(frozen=True)
class ConditionReport:
    results: tuple
    N: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name) -> ConditionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def _condition(name, lhs, rhs, rtol):
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    margin = (rhs - lhs) / np.maximum(np.abs(rhs), TINY)
    bad = np.flatnonzero(margin < -rtol)
    return ConditionResult(
        name=name,
        passed=bad.size == 0,
        first_violation=int(bad[0]) if bad.size else None,
        worst_margin=float(margin.min()),
    )


def check_conditions(s: Schedule, f_delta_minus_F0_norm: float, y_norm_est: float, N: int,
                     rtol: float = 1e-12) -> ConditionReport:
    """Evaluate the five schedule conditions for ``n = 0..N``.

    Violations are reported, never raised.  `rtol` absorbs rounding in
    conditions that hold with equality by construction.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    n = np.arange(N + 1)
    a = s.a(n)
    a_next = s.a(n + 1)
    jump = (a - a_next) / a_next
    results = (
        _condition("ratio", a, 2.0 * a_next, rtol),
        _condition("initial_data", f_delta_minus_F0_norm, s.a0**2 / s.lam, rtol),
        _condition("lambda_bound", s.M1 / s.lam, y_norm_est, rtol),
        _condition("increment", jump / a_next, np.full(n.shape, 1.0 / (2.0 * s.c1 * s.lam)), rtol),
        _condition("recursion", s.c0 * a / s.lam**2 + jump * s.c1, a_next / s.lam, rtol),
    )
    return ConditionReport(results=results, N=N)


def a_priori_n0(s: Schedule, delta: float, y_norm_est: float) -> int:
    """The index ``n0`` with ``delta / a_{n0+1} > ||y|| / (C - 1) >= delta / a_{n0}``.

    ``delta / a_n`` increases strictly in ``n``, so ``n0`` is unique when it
    exists.  The closed-form inverse of the schedule gives a starting guess
    which is then corrected against the inequalities themselves.

    Raises
    ------
    ValueError
        If ``delta / a_0`` already exceeds the threshold (no such ``n0``) or
        ``n0`` exceeds ``10**8``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    T = y_norm_est / (s.C - 1.0)

    def ok(n):
        return delta / s.a(n) <= T

    if not ok(0):
        raise ValueError(
            f"delta / a_0 = {delta / s.a0:.3e} exceeds ||y|| / (C - 1) = {T:.3e}; "
            f"a_0 is too small for this noise level"
        )
    guess = (T * s.d0 / delta) ** (1.0 / s.b) - s.d
    if not math.isfinite(guess) or guess > N0_CAP:
        raise ValueError(f"a priori index exceeds cap {N0_CAP}")
    n0 = max(0, int(math.floor(guess)))
    while n0 > 0 and not ok(n0):
        n0 -= 1
    while ok(n0 + 1):
        n0 += 1
        if n0 > N0_CAP:
            raise ValueError(f"a priori index exceeds cap {N0_CAP}")
    return n0


_SCHEDULE_KEYS = ("d0", "d", "b", "lambda", "C1", "gamma", "c0", "c1", "M1", "y_norm")


def schedule_to_dict(s: Schedule) -> dict:
    return {
        "d0": s.d0, "d": s.d, "b": s.b, "lambda": s.lam, "C1": s.C1, "gamma": s.gamma,
        "c0": s.c0, "c1": s.c1, "M1": s.M1, "y_norm": s.y_norm,
    }


def schedule_from_dict(data: dict) -> Schedule:
    missing = [k for k in _SCHEDULE_KEYS if k not in data]
    if missing:
        raise ValueError(f"schedule is missing keys: {', '.join(missing)}")
    return Schedule(
        d0=float(data["d0"]), lam=float(data["lambda"]), c0=float(data["c0"]),
        c1=float(data["c1"]), C1=float(data["C1"]), gamma=float(data["gamma"]),
        M1=float(data["M1"]), y_norm=float(data["y_norm"]), d=float(data["d"]),
        b=float(data["b"]),
    )
