"""Matrix-estimation reconstructors and the image <-> wide-matrix path.

Three estimators recover a matrix from Bernoulli-observed entries:

- ``usvt``: zero-fill, rescale by 1/p_hat, SVD, drop singular values below a
  universal threshold, clip.
- ``soft_impute``: alternating impute-and-shrink iteration minimizing
  0.5*sum_observed((M - x)^2) + lam*||M||_*.
- ``nuclear_norm_min``: approximate equality-constrained nuclear-norm
  minimization via an annealed soft-impute path with warm starts and a final
  exact reset of the observed entries.

RGB images are handled by concatenating channels side by side into a wide
H x (W*C) matrix before estimation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    ConfigError,
    InsufficientObservationsError,
    InvalidRangeError,
    ShapeError,
)
from .masking import Mask, sample_mask
from .numerics import as_matrix, svd

__all__ = [
    "Method",
    "EstimatorConfig",
    "ImageTensor",
    "Defense",
    "to_wide_matrix",
    "from_wide_matrix",
    "usvt",
    "soft_impute",
    "soft_impute_with_trace",
    "nuclear_norm_min",
    "reconstruct_image",
]


class Method(str, Enum):
    USVT = "usvt"
    SOFT_IMPUTE = "soft_impute"
    NUCLEAR_NORM = "nuclear_norm"


@dataclass(frozen=True)
class EstimatorConfig:
    method: Method = Method.SOFT_IMPUTE
    usvt_eta: float = 0.01
    si_lambda: float = 0.5
    max_iters: int = 200
    tol: float = 1e-4
    nn_lambda_min: float = 1e-3
    nn_anneal: float = 0.7
    clip_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        problems = []
        if self.usvt_eta <= 0:
            problems.append(f"usvt_eta must be > 0, got {self.usvt_eta}")
        if self.si_lambda < 0:
            problems.append(f"si_lambda must be >= 0, got {self.si_lambda}")
        if self.max_iters < 1:
            problems.append(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            problems.append(f"tol must be > 0, got {self.tol}")
        if self.nn_lambda_min <= 0:
            problems.append(f"nn_lambda_min must be > 0, got {self.nn_lambda_min}")
        if not 0.0 < self.nn_anneal < 1.0:
            problems.append(f"nn_anneal must be in (0, 1), got {self.nn_anneal}")
        lo, hi = self.clip_range
        if not lo < hi:
            problems.append(f"clip_range must satisfy lo < hi, got {self.clip_range}")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "clip_range", (float(lo), float(hi)))


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C image with entries in [0, 1]. Channels are 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeError(f"image must be H x W x C, got shape {d.shape}")
        if d.shape[2] not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {d.shape[2]}")
        if not np.all(np.isfinite(d)):
            raise ShapeError("image has non-finite entries")
        if d.min() < 0.0 or d.max() > 1.0:
            raise InvalidRangeError(
                f"image entries must lie in [0, 1], got [{d.min()}, {d.max()}]"
            )
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def flatten(self) -> np.ndarray:
        """Row-major flattening, the model-input convention."""
        return self.data.reshape(-1).copy()

    @staticmethod
    def from_flat(flat: np.ndarray, height: int, width: int, channels: int) -> "ImageTensor":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != height * width * channels:
            raise ShapeError(
                f"flat length {flat.size} does not match {height}x{width}x{channels}"
            )
        return ImageTensor(data=flat.reshape(height, width, channels))


def to_wide_matrix(img: ImageTensor) -> np.ndarray:
    """Concatenate channels along columns: H x W x C -> H x (W*C)."""
    return np.concatenate([img.data[:, :, c] for c in range(img.channels)], axis=1)


def from_wide_matrix(m, channels: int) -> ImageTensor:
    m = as_matrix(m)
    if channels not in (1, 3):
        raise ShapeError(f"channels must be 1 or 3, got {channels}")
    if m.shape[1] % channels != 0:
        raise ShapeError(
            f"cannot split {m.shape[1]} columns into {channels} channels"
        )
    w = m.shape[1] // channels
    planes = [m[:, c * w: (c + 1) * w] for c in range(channels)]
    return ImageTensor(data=np.clip(np.stack(planes, axis=2), 0.0, 1.0))


def _check_observed(x: np.ndarray, mask: Mask) -> np.ndarray:
    if mask.observed.shape != x.shape:
        raise ShapeError(
            f"mask shape {mask.observed.shape} does not match matrix shape {x.shape}"
        )
    if not mask.observed.any():
        raise InsufficientObservationsError(
            f"mask observes no entries of a {x.shape[0]}x{x.shape[1]} matrix"
        )
    return mask.observed


def _clip(m: np.ndarray, cfg: EstimatorConfig) -> np.ndarray:
    lo, hi = cfg.clip_range
    return np.clip(m, lo, hi)


def usvt(x, mask: Mask, cfg: EstimatorConfig) -> np.ndarray:
    """Universal singular value thresholding on a partially observed matrix."""
    x = as_matrix(x)
    obs = _check_observed(x, mask)
    p_hat = float(obs.mean())
    filled = np.where(obs, x, 0.0) / p_hat
    res = svd(filled)
    threshold = (2.0 + cfg.usvt_eta) * math.sqrt(max(x.shape) * p_hat)
    keep = res.sigma > threshold
    est = (res.u[:, keep] * res.sigma[keep]) @ res.vt[keep, :]
    return _clip(est, cfg)


def _soft_impute_core(x, obs, lam, max_iters, tol, m0=None):
    """Impute-and-shrink iteration. Returns (estimate, objective trace)."""
    x_obs = np.where(obs, x, 0.0)
    m = np.zeros_like(x) if m0 is None else np.array(m0, dtype=np.float64)
    trace = []
    for _ in range(max_iters):
        filled = np.where(obs, x_obs, m)
        res = svd(filled)
        shrunk = np.maximum(res.sigma - lam, 0.0)
        m_new = (res.u * shrunk) @ res.vt
        fit = 0.5 * float(np.sum((m_new[obs] - x[obs]) ** 2))
        trace.append(fit + lam * float(shrunk.sum()))
        change = float(np.linalg.norm(m_new - m)) / max(float(np.linalg.norm(m)), 1e-12)
        m = m_new
        if change <= tol:
            break
    return m, trace


def soft_impute_with_trace(x, mask: Mask, cfg: EstimatorConfig):
    """Soft-impute plus the per-iteration objective values (for diagnostics).

    The objective 0.5*sum_observed((M - x)^2) + si_lambda*||M||_* is
    non-increasing across iterations. Clipping happens after convergence and
    is not part of the traced objective.
    """
    x = as_matrix(x)
    obs = _check_observed(x, mask)
    m, trace = _soft_impute_core(x, obs, cfg.si_lambda, cfg.max_iters, cfg.tol)
    return _clip(m, cfg), trace


def soft_impute(x, mask: Mask, cfg: EstimatorConfig) -> np.ndarray:
    est, _ = soft_impute_with_trace(x, mask, cfg)
    return est


def nuclear_norm_min(x, mask: Mask, cfg: EstimatorConfig) -> np.ndarray:
    """Near-exact completion: annealed soft-impute path, then reset observed entries."""
    x = as_matrix(x)
    obs = _check_observed(x, mask)
    x_obs = np.where(obs, x, 0.0)
    lam = float(svd(x_obs).sigma[0])
    m = np.zeros_like(x)
    lams = []
    while lam > cfg.nn_lambda_min:
        lams.append(lam)
        lam *= cfg.nn_anneal
    lams.append(cfg.nn_lambda_min)
    for stage_lam in lams:
        m, _ = _soft_impute_core(x, obs, stage_lam, cfg.max_iters, cfg.tol, m0=m)
    m[obs] = x[obs]
    return _clip(m, cfg)


_ESTIMATORS = {
    Method.USVT: usvt,
    Method.SOFT_IMPUTE: soft_impute,
    Method.NUCLEAR_NORM: nuclear_norm_min,
}


def reconstruct_image(img: ImageTensor, p: float, seed: int, cfg: EstimatorConfig) -> ImageTensor:
    """Mask the image at probability p and reconstruct with the configured estimator."""
    if not 0.0 < p <= 1.0:
        raise InvalidRangeError(f"observation probability must be in (0, 1], got {p}")
    wide = to_wide_matrix(img)
    mask = sample_mask(wide.shape[0], wide.shape[1], p, seed)
    est = _ESTIMATORS[cfg.method](wide, mask, cfg)
    return from_wide_matrix(est, img.channels)


@dataclass(frozen=True)
class Defense:
    """Mask-and-reconstruct preprocessing applied in front of a classifier."""

    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    p: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise InvalidRangeError(f"defense probability must be in (0, 1], got {self.p}")

    def apply(self, img: ImageTensor, seed: int) -> ImageTensor:
        return reconstruct_image(img, self.p, seed, self.estimator)
