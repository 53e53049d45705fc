"""Bernoulli observation masks and training/inference probability schedules.

All randomness in the package flows through numpy's Philox counter-based
generator keyed by explicit integer seeds, so identical seeds reproduce
identical draws on every platform. Derived seeds are produced by
``derive_seed``, which mixes a root seed with integer tags through
``numpy.random.SeedSequence``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRangeError

__all__ = [
    "Mask",
    "MaskSchedule",
    "derive_seed",
    "rng_from_seed",
    "sample_mask",
    "make_schedule",
    "inference_p",
]


def derive_seed(*parts: int) -> int:
    """Deterministically mix integer parts into a fresh 64-bit seed.

    SeedSequence pads entropy with zero words, so trailing zeros do not change
    the result; callers keep streams apart with distinct nonzero tags in the
    second position.
    """
    state = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(state.generate_state(1, np.uint64)[0])


def rng_from_seed(seed: int) -> np.random.Generator:
    """Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class Mask:
    """Boolean observation pattern plus the probability it was drawn at."""

    observed: np.ndarray
    p_nominal: float

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        if obs.ndim != 2 or obs.shape[0] < 1 or obs.shape[1] < 1:
            raise InvalidRangeError(f"mask must be a non-empty 2-D array, got shape {obs.shape}")
        if not 0.0 <= self.p_nominal <= 1.0:
            raise InvalidRangeError(f"p_nominal must be in [0, 1], got {self.p_nominal}")
        object.__setattr__(self, "observed", obs)

    @property
    def rows(self) -> int:
        return self.observed.shape[0]

    @property
    def cols(self) -> int:
        return self.observed.shape[1]

    @property
    def observed_fraction(self) -> float:
        return float(self.observed.mean())


@dataclass(frozen=True)
class MaskSchedule:
    """The n observation probabilities used during training."""

    probs: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) < 1:
            raise InvalidRangeError("schedule needs at least one probability")
        for p in probs:
            if not 0.0 < p <= 1.0:
                raise InvalidRangeError(f"schedule probabilities must be in (0, 1], got {p}")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise InvalidRangeError(f"schedule probabilities must be non-decreasing: {probs}")
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return len(self.probs)


def sample_mask(rows: int, cols: int, p: float, seed: int) -> Mask:
    """Observe each of rows x cols entries independently with probability p."""
    if rows < 1 or cols < 1:
        raise InvalidRangeError(f"mask dimensions must be positive, got {rows}x{cols}")
    if not 0.0 <= p <= 1.0:
        raise InvalidRangeError(f"observation probability must be in [0, 1], got {p}")
    draws = rng_from_seed(seed).random((rows, cols))
    return Mask(observed=draws < p, p_nominal=float(p))


def make_schedule(a: float, b: float, n: int, include_endpoint: bool = False) -> MaskSchedule:
    """Equally spaced probabilities from a towards b.

    Default is endpoint-exclusive: p_i = a + i*(b-a)/n for i = 0..n-1, so
    (a=0.6, b=0.8, n=10) gives 0.60, 0.62, ..., 0.78. With include_endpoint
    the n points span [a, b] inclusively.
    """
    if n < 1:
        raise InvalidRangeError(f"schedule length must be >= 1, got {n}")
    if not (0.0 < a <= b <= 1.0):
        raise InvalidRangeError(f"need 0 < a <= b <= 1, got a={a}, b={b}")
    if n == 1:
        return MaskSchedule(probs=(a,))
    if include_endpoint:
        probs = tuple(a + i * (b - a) / (n - 1) for i in range(n))
    else:
        probs = tuple(a + i * (b - a) / n for i in range(n))
    return MaskSchedule(probs=probs)


def inference_p(s: MaskSchedule) -> float:
    """Arithmetic mean of the schedule, used as the single inference probability."""
    return float(sum(s.probs) / len(s.probs))
