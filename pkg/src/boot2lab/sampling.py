"""Seeded random streams, Gaussian draws and bootstrap resampling.

Every stream is addressed by a master seed plus a path of non-negative
integers, so a replication, an ensemble member or a noise channel can be
regenerated on its own without replaying anything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from boot2lab import _kernels

RNG_ALGORITHM = "numpy.PCG64DXSM/SeedSequence(master_seed, spawn_key=stream_path)"

MODES = ("multinomial", "poisson")


class DegenerateResampleError(ArithmeticError):
    """A resample with zero total weight (only possible in poisson mode)."""


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        path = tuple(int(p) for p in self.stream_path)
        if any(p < 0 for p in path):
            raise ValueError("stream_path entries must be non-negative")
        object.__setattr__(self, "stream_path", path)

    def child(self, *path: int) -> SeedSpec:
        return SeedSpec(self.master_seed, self.stream_path + tuple(path))


def derive_rng(seed_spec: SeedSpec) -> np.random.Generator:
    """Generator whose output depends only on (master_seed, stream_path)."""
    seq = np.random.SeedSequence(seed_spec.master_seed, spawn_key=seed_spec.stream_path)
    return np.random.Generator(np.random.PCG64DXSM(seq))


def sample_gaussian(rng: np.random.Generator, mean: float, sd: float, n: int) -> np.ndarray:
    if not sd >= 0:
        raise ValueError(f"sd must be >= 0, got {sd}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if sd == 0:
        return np.full(n, float(mean))
    return rng.normal(mean, sd, n)


@dataclass(frozen=True)
class ResampleCounts:
    counts: np.ndarray
    total: int

    @classmethod
    def from_counts(cls, counts) -> ResampleCounts:
        counts = np.asarray(counts)
        if counts.ndim != 1 or not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be a 1-d integer array")
        if counts.size and counts.min() < 0:
            raise ValueError("counts must be non-negative")
        return cls(counts, int(counts.sum(dtype=np.int64)))

    @classmethod
    def uniform(cls, n: int) -> ResampleCounts:
        """Every datapoint exactly once: resampling switched off."""
        return cls(np.ones(n, np.int32), n)


def bootstrap_counts(rng: np.random.Generator, n: int, mode: str = "multinomial") -> ResampleCounts:
    """Multiplicity of each datapoint in one bootstrap replica.

    multinomial: n indices drawn uniformly with replacement, then counted,
    i.e. a Multinomial(n, 1/n) draw. poisson: iid Poisson(1) weights.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if mode == "multinomial":
        dtype = np.int32 if n < 2**31 else np.int64
        idx = rng.integers(0, n, n, dtype=dtype)
        return ResampleCounts(_kernels.count_indices(idx, n), n)
    if mode == "poisson":
        counts = rng.poisson(1.0, n)
        return ResampleCounts(counts, int(counts.sum()))
    raise ValueError(f"unknown resample mode {mode!r}; expected one of {MODES}")


def split_values(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Veltkamp split: values == hi + lo exactly, each half with <= 26 bits."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    c = values * _kernels.SPLITTER
    hi = c - (c - values)
    return hi, values - hi


def _two_prod(a: float, b: float) -> tuple[float, float]:
    p = a * b
    ca = a * _kernels.SPLITTER
    a_hi = ca - (ca - a)
    a_lo = a - a_hi
    cb = b * _kernels.SPLITTER
    b_hi = cb - (cb - b)
    b_lo = b - b_hi
    return p, ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo


def split_weighted_mean(hi: np.ndarray, lo: np.ndarray, counts: ResampleCounts) -> float:
    """weighted_mean on values already passed through split_values."""
    if counts.total <= 0:
        raise DegenerateResampleError("resample has zero total weight; redraw")
    if hi.shape != counts.counts.shape:
        raise ValueError("values and counts differ in length")
    if counts.total >= _kernels.MAX_EXACT_COUNT and counts.counts.max() >= _kernels.MAX_EXACT_COUNT:
        raise ValueError("counts too large for exact products")
    s, e = _kernels.split_sum(counts.counts, hi, lo)
    h = s + e
    l = e - (h - s)
    total = float(counts.total)
    q = h / total
    p, p_err = _two_prod(q, total)
    return q + (((h - p) - p_err) + l) / total


def weighted_mean(values, counts: ResampleCounts) -> float:
    """sum(c_i * x_i) / sum(c_i), accumulated with error-free transformations."""
    hi, lo = split_values(values)
    return split_weighted_mean(hi, lo, counts)


def lag1_autocorrelation(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    return float(np.dot(d[:-1], d[1:]) / np.dot(d, d))
