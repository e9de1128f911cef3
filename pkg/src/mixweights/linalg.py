"""Dense float64 linear algebra used by the closed-form estimators.

Matrices and vectors are plain ``numpy.ndarray`` objects (row-major,
``float64``). The helpers here only add the shape/finiteness checks and the
error types the rest of the package relies on.
"""
import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFiniteResult, NotPositiveDefinite

PIVOT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-9


def as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {v.shape}")
    return v


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteResult(f"{what} produced non-finite entries")
    return x


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul")


def cholesky(a):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite when factorization fails or when any squared
    pivot is at most ``PIVOT_RTOL`` times the largest diagonal entry.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteResult("input matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    diag_max = np.max(np.diag(a)) if n else 0.0
    if n and diag_max <= 0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        low = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(low) ** 2
    if n and np.min(pivots) <= PIVOT_RTOL * diag_max:
        raise NotPositiveDefinite(
            f"pivot {np.min(pivots):.3e} below {PIVOT_RTOL:g} x max diagonal {diag_max:.3e}"
        )
    return low


def solve_spd(a, b):
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky."""
    a = as_matrix(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"rhs of length {b.shape[0]} for a {a.shape} system")
    low = cholesky(a)
    x = scipy.linalg.cho_solve((low, True), b, check_finite=False)
    return _check_finite(x, "solve_spd")
