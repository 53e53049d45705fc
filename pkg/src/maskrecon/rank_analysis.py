"""Approximate-rank analysis of image sets: per-image ranks, histogram, CDF."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, InvalidRangeError
from .estimation import ImageTensor, to_wide_matrix

__all__ = ["RankReport", "approximate_rank", "rank_report", "report_to_csv"]


@dataclass(frozen=True)
class RankReport:
    """Per-image approximate ranks with their histogram and empirical CDF.

    histogram[i] is the count of images whose rank equals rank_values[i];
    cdf[i] is the fraction of images with rank <= rank_values[i]. degenerate
    flags images that were all-zero (reported as rank 0).
    """

    ranks: tuple
    rank_values: tuple
    histogram: tuple
    cdf: tuple
    degenerate: tuple

    def cdf_at(self, rank: int) -> float:
        """Fraction of images with approximate rank <= rank."""
        return float(np.mean(np.asarray(self.ranks) <= rank))


def approximate_rank(
    img: ImageTensor, energy_fraction: float = 0.9, use_squared_energy: bool = True
) -> int:
    """Smallest k whose top-k singular values hold >= energy_fraction of the
    spectral energy of the image's wide matrix.

    Energy is the sum of squared singular values by default; the unsquared sum
    is available behind the flag. An all-zero image reports rank 0 (the
    degenerate case, flagged by rank_report).
    """
    if not 0.0 < energy_fraction <= 1.0:
        raise InvalidRangeError(f"energy_fraction must be in (0, 1], got {energy_fraction}")
    wide = to_wide_matrix(img)
    sigma = np.linalg.svd(wide, compute_uv=False)
    energy = sigma ** 2 if use_squared_energy else sigma
    total = float(energy.sum())
    if total == 0.0:
        return 0
    cumulative = np.cumsum(energy) / total
    # Tiny slack keeps exact-boundary cases (equal singular values) stable.
    return int(np.searchsorted(cumulative, energy_fraction - 1e-12) + 1)


def rank_report(
    dataset, energy_fraction: float = 0.9, use_squared_energy: bool = True
) -> RankReport:
    """Ranks of every image in the dataset, reduced to histogram and CDF."""
    images = list(dataset)
    if not images:
        raise EmptyInputError("rank_report needs at least one image")
    ranks = tuple(
        approximate_rank(img, energy_fraction, use_squared_energy) for img in images
    )
    lo, hi = min(ranks), max(ranks)
    rank_values = tuple(range(lo, hi + 1))
    counts = tuple(sum(1 for r in ranks if r == v) for v in rank_values)
    n = len(ranks)
    running = np.cumsum(counts) / n
    return RankReport(
        ranks=ranks,
        rank_values=rank_values,
        histogram=counts,
        cdf=tuple(float(c) for c in running),
        degenerate=tuple(r == 0 for r in ranks),
    )


def report_to_csv(report: RankReport) -> str:
    """Serialize as rank,count,cdf rows (one per rank value)."""
    lines = ["rank,count,cdf"]
    for v, c, f in zip(report.rank_values, report.histogram, report.cdf):
        lines.append(f"{v},{c},{f!r}")
    return "\n".join(lines) + "\n"
