"""Dense-matrix numerics: SVD with a fixed sign convention, norms, and
singular-value soft-thresholding.

Matrices are 2-D float64 numpy arrays throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRangeError, NumericalError, ShapeError

__all__ = [
    "SvdResult",
    "as_matrix",
    "svd",
    "svt_shrink",
    "frobenius_norm",
    "nuclear_norm",
]


def as_matrix(a) -> np.ndarray:
    """Validate and return `a` as a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"matrix of shape {m.shape[0]}x{m.shape[1]} has non-finite entries")
    return m


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD a = u @ diag(sigma) @ vt with k = min(rows, cols).

    sigma is non-increasing and non-negative; each left singular vector is
    oriented so its largest-magnitude entry is positive, which makes the
    factorization deterministic.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


def svd(a) -> SvdResult:
    """Thin SVD with the deterministic sign convention."""
    m = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            f"SVD did not converge on a {m.shape[0]}x{m.shape[1]} matrix"
        ) from e
    # Orient each left singular vector so its largest-|entry| is positive.
    pick = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pick, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    vt = vt * signs[:, None]
    return SvdResult(u=u, sigma=s, vt=vt)


def svt_shrink(a, lam: float) -> np.ndarray:
    """Soft-threshold the singular values: U diag(max(sigma - lam, 0)) Vt.

    This is the minimizer of 0.5*||Z - a||_F^2 + lam*||Z||_*.
    """
    if lam < 0:
        raise InvalidRangeError(f"shrinkage threshold must be >= 0, got {lam}")
    res = svd(a)
    shrunk = np.maximum(res.sigma - lam, 0.0)
    return (res.u * shrunk) @ res.vt


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a)))


def nuclear_norm(a) -> float:
    return float(svd(a).sigma.sum())
