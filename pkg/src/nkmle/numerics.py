"""Dense SPD kernels and the truncated Taylor matrix exponential.

Every use of an inverse covariance in the package goes through
:class:`SpdFactor` (a Cholesky factor plus triangular solves); nothing here
forms an explicit inverse.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve

from .errors import DimensionMismatch, NonPositivePivot

__all__ = [
    "SpdFactor",
    "cholesky",
    "log_det_spd",
    "solve_spd",
    "spd",
    "symmetrize",
    "taylor_matrix_exp",
]


def symmetrize(m: ArrayLike) -> NDArray[np.float64]:
    """Return (M + M^T) / 2, which is exactly symmetric bit-for-bit."""
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check_square(m: NDArray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")


def cholesky(m: ArrayLike) -> NDArray[np.float64]:
    """Lower-triangular L with L @ L.T == m.

    Raises NonPositivePivot when a pivot is <= 0 or the input holds
    non-finite entries.
    """
    m = np.asarray(m, dtype=np.float64)
    _check_square(m)
    if not np.all(np.isfinite(m)):
        raise NonPositivePivot("matrix has non-finite entries")
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NonPositivePivot(str(exc)) from None
    # LAPACK accepts a pivot that underflows to exactly zero on some inputs.
    if np.any(np.diagonal(L) <= 0.0):
        raise NonPositivePivot("zero pivot")
    return L


def spd(m: ArrayLike) -> NDArray[np.float64]:
    """Symmetrize ``m`` and check it factorizes; returns the symmetrized copy."""
    s = symmetrize(m)
    cholesky(s)
    return s


class SpdFactor:
    """Cholesky factorization of an SPD matrix, reused for repeated solves."""

    __slots__ = ("matrix", "L")

    def __init__(self, m: ArrayLike):
        self.matrix = symmetrize(m)
        self.L = cholesky(self.matrix)

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def solve(self, b: ArrayLike) -> NDArray[np.float64]:
        """Solve m @ y = b for a vector or a (dim, k) right-hand side."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.dim:
            raise DimensionMismatch(f"rhs leading dim {b.shape[0]} != {self.dim}")
        return cho_solve((self.L, True), b, check_finite=False)

    def solve_rows(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        """Row-wise solve: for r of shape (N, dim) return rows m^{-1} r_i."""
        return self.solve(r.T).T

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diagonal(self.L))))

    def quad_form_sum(self, r: NDArray[np.float64]) -> float:
        """sum_i r_i^T m^{-1} r_i over the rows of r."""
        r = np.atleast_2d(r)
        return float(np.sum(r * self.solve_rows(r)))


def log_det_spd(m: ArrayLike) -> float:
    return SpdFactor(m).log_det()


def solve_spd(m: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    return SpdFactor(m).solve(b)


def taylor_matrix_exp(a: ArrayLike, dt: float, j_terms: int) -> NDArray[np.float64]:
    """I + sum_{j=1..J} (a dt)^j / j!, by iterated multiplication.

    ``a`` may be a stack of square matrices with shape (..., n, n). The
    truncation is deliberate: the Lorenz transition is *defined* as this
    finite series, so no scaling-and-squaring is applied.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {a.shape}")
    if j_terms < 1:
        raise ValueError("j_terms must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    step = a * dt
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    term = eye
    out = eye.copy()
    for j in range(1, j_terms + 1):
        term = (term @ step) / j
        out = out + term
    return out
