"""Monotone operators, the test-problem catalog, and noisy problem instances.

The catalog is built around the first-kind integral operator

    (K u)(x) = int_0^1 min(x, t) u(t) dt

collocated at midpoints ``x_i = (i - 1/2) / d`` with weight ``1/d``.  The
resulting matrix is symmetric positive definite with eigenvalues decaying
like ``1/k^2``, so the discrete problem inherits the ill-conditioning of
the compact operator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .linalg import LinearMap, as_vector, inner

__all__ = [
    "CATALOG",
    "MonotoneOperator",
    "MonotoneProblem",
    "MonotonicityReport",
    "OperatorBounds",
    "build_operator",
    "catalog_cubic",
    "catalog_linear_fredholm",
    "estimate_bounds",
    "exact_solution",
    "fredholm_matrix",
    "jacobian_error",
    "load_problem",
    "make_problem",
    "midpoints",
    "negated",
    "operator_norm",
    "problem_from_dict",
    "problem_to_dict",
    "save_problem",
    "verify_monotone",
]


@dataclass(frozen=True, eq=False)
class MonotoneOperator:
    """A map ``F: R^d -> R^d`` together with its Jacobian.

    ``name`` and ``params`` identify the catalog entry so problems can be
    written to disk and rebuilt.  ``linear`` marks operators whose Jacobian
    is a constant map.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], LinearMap]
    name: str = "custom"
    params: dict = field(default_factory=dict)
    linear: bool = False

    def __call__(self, u):
        return self.apply(u)


@dataclass(frozen=True)
class OperatorBounds:
    """Sampled estimates of ``sup ||F^(j)(u)||`` over the ball ``B(u0, R)``.

    Sampling only ever sees points inside the ball, so each ``Mj`` is a
    lower estimate of the true supremum.
    """

    M0: float
    M1: float
    M2: float
    R: float
    u0: np.ndarray


@dataclass(frozen=True, eq=False)
class MonotoneProblem:
    operator: MonotoneOperator
    y: np.ndarray
    f: np.ndarray
    delta: float
    f_delta: np.ndarray
    seed: int

    @property
    def dim(self):
        return self.operator.dim


class MonotonicityReport(NamedTuple):
    passed: bool
    worst: float  # smallest sampled <F(u) - F(v), u - v>


# ---------------------------------------------------------------------------
# catalog


def midpoints(d: int) -> np.ndarray:
    return (np.arange(1, d + 1) - 0.5) / d


def fredholm_matrix(d: int) -> np.ndarray:
    """Midpoint collocation of the ``min(x, t)`` kernel with weight ``1/d``."""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    x = midpoints(d)
    return np.minimum.outer(x, x) / d


def _polynomial_operator(A: np.ndarray, c: float, name: str, params: dict) -> MonotoneOperator:
    A = np.array(A, dtype=float)
    A.setflags(write=False)
    d = A.shape[0]

    if c == 0.0:
        J = LinearMap(A, reusable=True)
        return MonotoneOperator(
            dim=d,
            apply=lambda u: A @ u,
            jacobian=lambda u: J,
            name=name,
            params=params,
            linear=True,
        )

    def apply(u):
        return A @ u + c * u**3

    def jacobian(u):
        m = A.copy()
        m[np.diag_indices(d)] += 3.0 * c * u**2
        return LinearMap(m)

    return MonotoneOperator(dim=d, apply=apply, jacobian=jacobian, name=name, params=params)


def catalog_linear_fredholm(d: int) -> MonotoneOperator:
    """Linear operator ``F(u) = A u`` with ``A = fredholm_matrix(d)``."""
    if d < 2:
        raise ValueError(f"linear_fredholm needs d >= 2, got {d}")
    return _polynomial_operator(fredholm_matrix(d), 0.0, "linear_fredholm", {})


def catalog_cubic(d: int, c: float, matrix=None) -> MonotoneOperator:
    """``F(u) = A u + c u**3`` (componentwise cube), ``F'(u) = A + 3c diag(u**2)``.

    `matrix` overrides ``A``; it must have a positive semidefinite
    symmetric part for the result to be monotone.
    """
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    if not (np.isfinite(c) and c >= 0):
        raise ValueError(f"nonlinearity c must be a finite nonnegative number, got {c}")
    if matrix is None:
        A = fredholm_matrix(d)
    else:
        A = np.array(matrix, dtype=float).reshape(d, d)
    return _polynomial_operator(A, float(c), "cubic", {"c": float(c)})


def negated(op: MonotoneOperator) -> MonotoneOperator:
    """``-F``.  Anti-monotone whenever ``F`` is strictly monotone; used as a
    deliberate counterexample."""

    def jacobian(u):
        return LinearMap(-op.jacobian(u).matrix)

    return MonotoneOperator(
        dim=op.dim,
        apply=lambda u: -op.apply(u),
        jacobian=jacobian,
        name=op.name,
        params={**op.params, "negate": True},
        linear=op.linear,
    )


CATALOG = {
    "linear_fredholm": lambda dim, **kw: catalog_linear_fredholm(dim),
    "cubic": lambda dim, c=0.0, **kw: catalog_cubic(dim, c),
}


def build_operator(catalog_id: str, dim: int, c: float = 0.0, negate: bool = False) -> MonotoneOperator:
    try:
        factory = CATALOG[catalog_id]
    except KeyError:
        raise ValueError(
            f"unknown catalog id {catalog_id!r}; choose from {sorted(CATALOG)}"
        ) from None
    op = factory(dim, c=c)
    return negated(op) if negate else op


_PROFILES = {
    "exp": lambda x: np.exp(-x),
    "sin": lambda x: np.sin(0.5 * np.pi * x),
    "poly": lambda x: x * (1.0 - x),
    "ones": lambda x: np.ones_like(x),
}


def exact_solution(profile: str, dim: int, norm: float | None = None) -> np.ndarray:
    """Sample a smooth profile at the midpoints, optionally rescaled to a
    given Euclidean norm."""
    try:
        y = _PROFILES[profile](midpoints(dim))
    except KeyError:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(_PROFILES)}") from None
    if norm is not None:
        y = y * (norm / np.linalg.norm(y))
    return y


# ---------------------------------------------------------------------------
# problems


def make_problem(op: MonotoneOperator, y, delta: float, seed: int) -> MonotoneProblem:
    """Exact data ``f = F(y)`` plus noise of norm exactly `delta`.

    The noise direction is a standard normal draw from ``seed``.
    """
    y = as_vector(y, op.dim)
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    f = np.asarray(op.apply(y), dtype=float)
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(op.dim)
    e_norm = np.linalg.norm(e)
    while e_norm == 0.0:
        e = rng.standard_normal(op.dim)
        e_norm = np.linalg.norm(e)
    f_delta = f + (delta / e_norm) * e
    for arr in (y, f, f_delta):
        arr.setflags(write=False)
    return MonotoneProblem(op, y, f, float(delta), f_delta, int(seed))


def problem_to_dict(problem: MonotoneProblem) -> dict:
    op = problem.operator
    return {
        "catalog": op.name,
        "dim": op.dim,
        "params": dict(op.params),
        "y": [float(v) for v in problem.y],
        "delta": problem.delta,
        "seed": problem.seed,
    }


def problem_from_dict(data: dict) -> MonotoneProblem:
    params = dict(data.get("params", {}))
    op = build_operator(
        data["catalog"], int(data["dim"]), c=float(params.get("c", 0.0)),
        negate=bool(params.get("negate", False)),
    )
    return make_problem(op, data["y"], float(data["delta"]), int(data["seed"]))


def save_problem(problem: MonotoneProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2) + "\n")


def load_problem(path) -> MonotoneProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# diagnostics


def operator_norm(J: LinearMap, iters: int = 200, rtol: float = 1e-12, seed: int = 0):
    """Spectral norm of `J` by power iteration on ``J^T J``.

    Returns ``(norm, v)`` with ``v`` the approximate top right singular
    vector.
    """
    M = J.matrix
    v = np.random.default_rng(seed).standard_normal(J.dim)
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            return 0.0, v
        v = w / w_norm
        if abs(w_norm - sigma2) <= rtol * w_norm:
            sigma2 = w_norm
            break
        sigma2 = w_norm
    return float(np.sqrt(sigma2)), v


def _ball_points(rng, center, R, count):
    """Alternate points on the sphere and uniformly inside the ball."""
    d = center.size
    pts = []
    for i in range(count):
        h = rng.standard_normal(d)
        h /= np.linalg.norm(h)
        r = R if i % 2 == 0 else R * rng.random() ** (1.0 / d)
        pts.append(center + r * h)
    return pts


def estimate_bounds(op: MonotoneOperator, u0, R: float, samples: int, seed: int = 0,
                    directions: int = 4) -> OperatorBounds:
    """Estimate ``M0, M1, M2`` on ``B(u0, R)`` by sampling.

    The sample always contains ``u0 +- R v`` where ``v`` is the top right
    singular vector of ``F'(u0)``, then `samples` random points alternating
    between the sphere and the interior.  ``M1`` uses power iteration;
    ``M2`` uses central differences of the Jacobian with step ``1e-4 R``
    along several unit directions per point.
    """
    u0 = as_vector(u0, op.dim)
    if not R > 0:
        raise ValueError(f"R must be positive, got {R!r}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    _, v_top = operator_norm(op.jacobian(u0))
    points = [u0 + R * v_top, u0 - R * v_top] + _ball_points(rng, u0, R, samples)

    eps = 1e-4 * R
    M0 = M1 = M2 = 0.0
    for u in points:
        M0 = max(M0, float(np.linalg.norm(op.apply(u))))
        M1 = max(M1, operator_norm(op.jacobian(u))[0])
        hs = [v_top]
        radial = u - u0
        if np.linalg.norm(radial) > 0:
            hs.append(radial / np.linalg.norm(radial))
        for _ in range(directions):
            h = rng.standard_normal(op.dim)
            hs.append(h / np.linalg.norm(h))
        for h in hs:
            diff = op.jacobian(u + eps * h).matrix - op.jacobian(u - eps * h).matrix
            M2 = max(M2, operator_norm(LinearMap(diff))[0] / (2 * eps))
    u0.setflags(write=False)
    return OperatorBounds(M0=M0, M1=M1, M2=M2, R=float(R), u0=u0)


def verify_monotone(op: MonotoneOperator, region_radius: float, pairs: int, seed: int = 0):
    """Sample `pairs` pairs in the ball of radius `region_radius` about 0 and
    test ``<F(u) - F(v), u - v> >= -1e-10 (1 + ||u - v||^2)``."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    center = np.zeros(op.dim)
    passed = True
    worst = np.inf
    for _ in range(pairs):
        u, v = _ball_points(rng, center, region_radius, 2)
        diff = u - v
        value = inner(op.apply(u) - op.apply(v), diff)
        worst = min(worst, value)
        if value < -1e-10 * (1.0 + inner(diff, diff)):
            passed = False
    return MonotonicityReport(passed, float(worst))


def jacobian_error(op: MonotoneOperator, u, h, eps: float) -> float:
    """``||(F(u + eps h) - F(u)) / eps - F'(u) h||``."""
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    fd = (op.apply(u + eps * h) - op.apply(u)) / eps
    return float(np.linalg.norm(fd - op.jacobian(u)(h)))
