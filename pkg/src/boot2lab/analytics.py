"""Closed-form population moments of the toy pipeline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from boot2lab.toy_model import ToyConfig


@dataclass(frozen=True)
class AnalyticMoments:
    var_boot_avg: float
    expected_cond_var: float
    expected_delta2_boot_boot: float
    expected_delta2_stderr: float
    cov_pair: float
    var_single: float
    mcstat_term: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sqrt_var_boot_avg"] = math.sqrt(self.var_boot_avg)
        d["sqrt_expected_delta2_boot_boot"] = math.sqrt(self.expected_delta2_boot_boot)
        d["sqrt_expected_delta2_stderr"] = math.sqrt(self.expected_delta2_stderr)
        return d


def compute_moments(config: ToyConfig) -> AnalyticMoments:
    """Variance of the merged estimate and expectations of both squared deltas.

    var_boot_avg = sx2/N + (N-1)/N * sx2/(N M) + se2/M, where the first term
    is the dataset (mc-stat) contribution and the rest is the spread given the
    dataset. The double bootstrap recovers (M-1)/M of the latter only.
    """
    n, m = config.n, config.m
    sx2, se2 = config.sigma_x**2, config.sigma_eps**2
    mcstat = sx2 / n
    cond = (n - 1) / n * sx2 / (n * m) + se2 / m
    return AnalyticMoments(
        var_boot_avg=mcstat + cond,
        expected_cond_var=cond,
        expected_delta2_boot_boot=(m - 1) / m * cond,
        expected_delta2_stderr=cond,
        cov_pair=mcstat,
        var_single=mcstat + (n - 1) / n * sx2 / n + se2,
        mcstat_term=mcstat,
    )


def mcstat_fraction_missed(moments: AnalyticMoments) -> float:
    """Share of the true variance that neither delta can see."""
    if moments.var_boot_avg <= 0:
        raise ZeroDivisionError("total variance is zero; the missed fraction is undefined")
    return moments.mcstat_term / moments.var_boot_avg


def expected_fix_variances(config: ToyConfig) -> tuple[float, float]:
    """Expected squared uncertainty of the two corrected procedures.

    plain:  one estimate per dataset, bootstrapped as usual;
            E[delta^2] = (N-1)/N * sx2/N + se2.
    nested: M members on the unresampled dataset, merged, with the whole
            build repeated in every bootstrap pseudo-experiment;
            E[delta^2] = (N-1)/N * sx2/N + se2/M.

    Both follow from E[population variance of D] = (N-1)/N * sx2 and are
    checked against Monte Carlo in the test suite.
    """
    n, m = config.n, config.m
    sx2, se2 = config.sigma_x**2, config.sigma_eps**2
    resample = (n - 1) / n * sx2 / n
    return resample + se2, resample + se2 / m


def true_fix_variances(config: ToyConfig) -> tuple[float, float]:
    """Actual variance of the plain and nested estimates across datasets."""
    sx2, se2 = config.sigma_x**2, config.sigma_eps**2
    return sx2 / config.n + se2, sx2 / config.n + se2 / config.m


def normal_coverage(delta2: float, true_var: float) -> float:
    """P(|Z| <= delta) for Z ~ N(0, true_var), treating delta as fixed."""
    if true_var == 0:
        return 1.0
    return math.erf(math.sqrt(delta2 / true_var) / math.sqrt(2))
