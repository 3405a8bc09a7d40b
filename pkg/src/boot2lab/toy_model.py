"""The Gaussian toy estimation pipeline.

A dataset of N iid N(theta, sigma_x^2) points is bootstrapped M times; each
replica's mean plus an independent N(0, sigma_eps^2) "training error" is one
ensemble member. The merged estimate is the ensemble average, and its
uncertainty is estimated by resampling the M member estimates (the double
bootstrap) or by the standard-error formula over the members. Both
uncertainty estimates are deliberately implemented as stated, flaw included.

Stream layout under a base SeedSpec ``s``:

    s/0       dataset draws
    s/1/m     resampling of member m
    s/2       noise channel, one draw per member in member order
    s/3       double-bootstrap draws
"""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from boot2lab.sampling import (
    MODES,
    DegenerateResampleError,
    ResampleCounts,
    SeedSpec,
    bootstrap_counts,
    derive_rng,
    sample_gaussian,
    split_values,
    split_weighted_mean,
)

MERGE_MODES = ("arithmetic", "geometric")

DATASET_STREAM, MEMBER_STREAM, NOISE_STREAM, DOUBLE_BOOT_STREAM = 0, 1, 2, 3

# Members are built on threads only above this many resampled points (M * N).
MEMBER_PARALLEL_WORK = 50_000_000

_DOUBLE_BOOT_CHUNK = 1 << 20


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ToyConfig:
    theta: float = 5.0
    sigma_x: float = 100.0
    sigma_eps: float = 0.01
    n: int = 10**6
    m: int = 10**3
    k: int = 10**4
    merge_mode: str = "arithmetic"
    resample_mode: str = "multinomial"

    def __post_init__(self):
        for name in ("n", "m", "k"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.n < 2:
            raise ConfigError("n must be ≥ 2")
        if self.m < 1:
            raise ConfigError("m must be ≥ 1")
        if self.k < 2:
            raise ConfigError("k must be ≥ 2")
        if not math.isfinite(self.theta):
            raise ConfigError("theta must be finite")
        for name in ("sigma_x", "sigma_eps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and ≥ 0")
        if self.merge_mode not in MERGE_MODES:
            raise ConfigError(f"merge_mode must be one of {MERGE_MODES}")
        if self.resample_mode not in MODES:
            raise ConfigError(f"resample_mode must be one of {MODES}")

    def replace(self, **changes) -> ToyConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ToyConfig:
        return cls(**d)


PRESETS = {
    "paper-full": ToyConfig(),
    "desk-reduced": ToyConfig(n=10**4, m=20, k=500),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("dataset must be a non-empty 1-d array")
        if not np.isfinite(values).all():
            raise ValueError("dataset values must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    @cached_property
    def split(self) -> tuple[np.ndarray, np.ndarray]:
        return split_values(self.values)

    def mean(self) -> float:
        return split_weighted_mean(*self.split, ResampleCounts.uniform(len(self)))


@dataclass(frozen=True, eq=False)
class Ensemble:
    estimates: np.ndarray
    redraws: int = 0

    def __post_init__(self):
        estimates = np.asarray(self.estimates, dtype=np.float64)
        if estimates.ndim != 1 or estimates.size == 0:
            raise ValueError("ensemble must be a non-empty 1-d array")
        object.__setattr__(self, "estimates", estimates)

    def __len__(self):
        return self.estimates.size

    def prefix(self, m: int) -> Ensemble:
        return Ensemble(self.estimates[:m])


@dataclass(frozen=True)
class UncertaintyPair:
    delta_boot_boot: float
    delta_stderr: float
    bias_corrected: bool = False


def generate_dataset(config: ToyConfig, rng: np.random.Generator) -> Dataset:
    return Dataset(sample_gaussian(rng, config.theta, config.sigma_x, config.n))


def _member(dataset, sigma_eps, resample_mode, rng, noise=None, resample=True):
    hi, lo = dataset.split
    redraws = 0
    if resample:
        while True:
            counts = bootstrap_counts(rng, len(dataset), resample_mode)
            try:
                value = split_weighted_mean(hi, lo, counts)
                break
            except DegenerateResampleError:
                redraws += 1
    else:
        value = dataset.mean()
    if noise is None:
        noise = sample_gaussian(rng, 0.0, sigma_eps, 1)[0]
    return value + noise, redraws


def boot_member_estimate(
    dataset: Dataset,
    sigma_eps: float,
    resample_mode: str,
    rng: np.random.Generator,
    noise: float | None = None,
    resample: bool = True,
) -> float:
    """Mean of one bootstrap replica of ``dataset`` plus N(0, sigma_eps^2) noise.

    ``noise`` overrides the noise draw (build_ensemble feeds it from its own
    stream). With ``resample=False`` the replica is the dataset itself, which
    isolates the noise channel. All-zero poisson replicas are redrawn.
    """
    return _member(dataset, sigma_eps, resample_mode, rng, noise, resample)[0]


def member_noise(config: ToyConfig, seed: SeedSpec, m: int | None = None) -> np.ndarray:
    m = config.m if m is None else m
    return sample_gaussian(derive_rng(seed.child(NOISE_STREAM)), 0.0, config.sigma_eps, m)


def build_ensemble(
    dataset: Dataset,
    config: ToyConfig,
    seed: SeedSpec,
    m: int | None = None,
    workers: int = 1,
) -> Ensemble:
    """M member estimates, member j drawing from its own stream under ``seed``.

    Streams are prefix-stable: the first j members are the same for any
    ensemble size >= j.
    """
    m = config.m if m is None else m
    noise = member_noise(config, seed, m)
    estimates = np.empty(m)
    redraws = np.zeros(m, np.int64)

    def one(j):
        rng = derive_rng(seed.child(MEMBER_STREAM, j))
        estimates[j], redraws[j] = _member(
            dataset, config.sigma_eps, config.resample_mode, rng, noise[j]
        )

    if workers > 1 and m * len(dataset) >= MEMBER_PARALLEL_WORK:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(one, range(m)))
    else:
        for j in range(m):
            one(j)
    return Ensemble(estimates, int(redraws.sum()))


def merge(values, mode: str = "arithmetic", axis: int = -1):
    """Arithmetic or geometric mean along ``axis``.

    Values are taken relative to the first element along the axis, so equal
    members merge to exactly that value.
    """
    if isinstance(values, Ensemble):
        values = values.estimates
    x = np.asarray(values, dtype=np.float64)
    x = np.moveaxis(x, axis, -1)
    if x.shape[-1] == 0:
        raise ValueError("cannot merge an empty ensemble")
    first = x[..., :1]
    if mode == "arithmetic":
        out = first[..., 0] + (x - first).mean(axis=-1)
    elif mode == "geometric":
        if not (x > 0).all():
            raise ValueError("geometric merge needs all estimates > 0")
        out = first[..., 0] * np.exp(np.log(x / first).mean(axis=-1))
    else:
        raise ValueError(f"unknown merge mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def double_bootstrap(
    ensemble: Ensemble, k: int, rng: np.random.Generator, merge_mode: str = "arithmetic"
) -> np.ndarray:
    """K merges of M members drawn with replacement from the ensemble itself."""
    m = len(ensemble)
    if k < 1:
        raise ValueError("k must be ≥ 1")
    est = ensemble.estimates
    out = np.empty(k)
    rows = max(1, _DOUBLE_BOOT_CHUNK // m)
    for start in range(0, k, rows):
        stop = min(k, start + rows)
        idx = rng.integers(0, m, size=(stop - start, m))
        out[start:stop] = merge(est[idx], merge_mode)
    return out


def sample_variance(x) -> float:
    """Bessel-corrected sample variance; exactly 0 for constant input."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("sample variance needs at least 2 values")
    d = x - x[0]
    d = d - d.mean()
    return float(np.dot(d, d) / (x.size - 1))


def delta_boot_boot(double_boot_estimates, bias_correct: bool = False, m: int | None = None) -> float:
    """Sample sd of the double-bootstrap merges.

    With ``bias_correct`` the variance is scaled by m/(m-1) first.
    """
    est = np.asarray(double_boot_estimates, dtype=np.float64)
    if est.size < 2:
        raise ValueError("delta_boot_boot needs at least 2 double-bootstrap estimates")
    var = sample_variance(est)
    if bias_correct:
        if m is None or m < 2:
            raise ValueError("bias correction needs an ensemble size m ≥ 2")
        var *= m / (m - 1)
    return math.sqrt(var)


def delta_stderr_formula(ensemble: Ensemble) -> float:
    m = len(ensemble)
    if m < 2:
        raise ValueError("standard-error formula needs M ≥ 2")
    return math.sqrt(sample_variance(ensemble.estimates) / m)


def uncertainties(
    ensemble: Ensemble, double_boot_estimates, bias_correct: bool = False
) -> UncertaintyPair:
    m = len(ensemble)
    return UncertaintyPair(
        delta_boot_boot(double_boot_estimates, bias_correct and m > 1, m),
        delta_stderr_formula(ensemble) if m > 1 else 0.0,
        bias_correct and m > 1,
    )


def default_workers() -> int:
    """Worker count from BOOT2LAB_WORKERS, else the CPU count."""
    env = os.environ.get("BOOT2LAB_WORKERS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("BOOT2LAB_WORKERS must be ≥ 1")
        return n
    return os.cpu_count() or 1
