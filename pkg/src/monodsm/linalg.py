"""Dense vector and linear-map primitives on R^d.

Vectors are plain 1-D ``float64`` numpy arrays; :func:`as_vector` is the
validating constructor.  :class:`LinearMap` wraps a square matrix and is
treated as an immutable value.

The workhorse is :func:`reg_solve`, which solves ``(J + a I) z = w`` for
``a > 0``.  Every Newton-type step in the package goes through it.
"""

from __future__ import annotations

import functools
import warnings

import numpy as np
import scipy.linalg

__all__ = [
    "LinearMap",
    "SingularSystemError",
    "as_vector",
    "inner",
    "norm",
    "reg_solve",
]

EPS = np.finfo(float).eps
DEFAULT_TOL = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when ``J + a I`` is numerically singular.

    ``smallest`` holds the smallest pivot (LU path) or smallest shifted
    eigenvalue magnitude (spectral path) that was encountered.
    """

    def __init__(self, message, smallest):
        super().__init__(message)
        self.smallest = smallest


def as_vector(values, dim=None) -> np.ndarray:
    """Return `values` as a finite 1-D float array, optionally of length `dim`."""
    v = np.array(values, dtype=float, copy=True)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise ValueError(f"expected dimension {dim}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite coordinates")
    return v


def inner(u, v) -> float:
    """Euclidean inner product ``sum(u_i * v_i)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(u @ v)


def norm(u) -> float:
    return float(np.sqrt(inner(u, u)))


class LinearMap:
    """A dense ``d x d`` real matrix acting on vectors of length ``d``.

    Parameters
    ----------
    matrix : array_like
        Square, finite matrix.  A private read-only copy is kept.
    reusable : bool, optional
        Hint that this same map will be solved against many shifts ``a``
        (e.g. the constant Jacobian of a linear operator).  For symmetric
        reusable maps :func:`reg_solve` factors the matrix once by a
        symmetric eigendecomposition and then solves each shifted system
        in O(d^2).
    """

    __slots__ = ("_matrix", "reusable", "__dict__")

    def __init__(self, matrix, reusable=False):
        m = np.array(matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        m.setflags(write=False)
        self._matrix = m
        self.reusable = bool(reusable)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: map is {self.dim}, vector {v.shape}")
        return self._matrix @ v

    def __repr__(self):
        return f"LinearMap(dim={self.dim}, reusable={self.reusable})"

    @functools.cached_property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self._matrix, self._matrix.T))

    @functools.cached_property
    def spectral(self):
        """``(eigenvalues, eigenvectors)`` of a symmetric map."""
        if not self.symmetric:
            raise ValueError("spectral factorization requires a symmetric map")
        return np.linalg.eigh(self._matrix)

    @functools.cached_property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self._matrix)))


def _shifted(J: LinearMap, a: float) -> np.ndarray:
    m = np.array(J.matrix)
    m[np.diag_indices_from(m)] += a
    return m


def _spectral_solver(J: LinearMap, a: float):
    lam, q = J.spectral
    # eigh sorts ascending, so the smallest |lam_i + a| sits next to -a
    k = int(lam.searchsorted(-a))
    smallest = min(abs(lam[i] + a) for i in (k - 1, k) if 0 <= i < lam.size)
    if smallest <= lam.size * EPS * max(J.max_abs, a):
        raise SingularSystemError(
            f"J + aI is numerically singular (a={a:g}): smallest shifted "
            f"eigenvalue magnitude {smallest:.3e}",
            smallest,
        )
    shifted = lam + a
    qt = q.T

    def solve(rhs):
        return q @ ((qt @ rhs) / shifted)

    return solve


def _lu_solver(J: LinearMap, a: float):
    m = _shifted(J, a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    pivots = np.abs(np.diag(lu))
    smallest = float(np.min(pivots))
    if smallest <= J.dim * EPS * float(np.max(np.abs(m))):
        raise SingularSystemError(
            f"J + aI is numerically singular (a={a:g}): smallest LU pivot "
            f"{smallest:.3e}; the operator is probably not monotone or a is "
            f"below rounding level",
            smallest,
        )

    def solve(rhs):
        return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)

    return solve


def reg_solve(J: LinearMap, a: float, w, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve ``(J + a I) z = w`` for ``a > 0``.

    General maps are handled by LU with partial pivoting; no symmetry is
    assumed.  Symmetric maps flagged ``reusable`` use a cached
    eigendecomposition.

    The result is accepted once ``||(J + aI) z - w|| <= tol * ||w||``.  Up
    to two steps of iterative refinement are taken to reach that; if the
    system is so ill-conditioned that the target lies below what a
    backward-stable solve can deliver, the solution is accepted at the
    backward-stable level ``8 d eps (||J + aI|| ||z|| + ||w||)``.

    Raises
    ------
    ValueError
        If ``a <= 0`` or dimensions disagree.
    SingularSystemError
        If ``J + aI`` is numerically singular.
    """
    if not a > 0:
        raise ValueError(f"shift a must be positive, got {a!r}")
    w = np.asarray(w, dtype=float)
    m = J.matrix
    if w.shape != (m.shape[0],):
        raise ValueError(f"dimension mismatch: map is {m.shape[0]}, rhs {w.shape}")

    if J.reusable and J.symmetric:
        solve = _spectral_solver(J, a)
    else:
        solve = _lu_solver(J, a)

    z = solve(w)
    w_norm = float(np.sqrt(w @ w))
    target = tol * w_norm
    for refinements in range(3):
        r = w - (m @ z + a * z)
        r_norm = float(np.sqrt(r @ r))
        if r_norm <= target:
            return z
        if refinements < 2:
            z = z + solve(r)
    scale = (m.shape[0] * J.max_abs + a) * float(np.sqrt(z @ z)) + w_norm
    if r_norm <= max(target, 8 * m.shape[0] * EPS * scale) and np.all(np.isfinite(z)):
        return z
    raise SingularSystemError(
        f"regularized solve did not reach residual tolerance: "
        f"||r|| = {r_norm:.3e}, ||w|| = {w_norm:.3e}",
        float("nan"),
    )
