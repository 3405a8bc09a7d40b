"""Monte Carlo studies of the toy pipeline.

Each study draws replication ``i`` from ``seed.child(i)``, runs replications
as independent tasks (a process pool when more than one worker is allowed)
and reduces the per-replication records in replication order, so results do
not depend on the worker count.

Within a replication the toy-model stream layout applies (dataset, member,
noise and double-bootstrap streams 0-3); the corrected procedures add

    s/4       noise for the estimates on the original dataset
    s/5/j     resampling of pseudo-experiment j
    s/6       noise for the pseudo-experiments
    s/8/i     inner run i of a conditional study
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from boot2lab.analytics import (
    AnalyticMoments,
    compute_moments,
    expected_fix_variances,
    true_fix_variances,
)
from boot2lab.sampling import SeedSpec, derive_rng
from boot2lab.toy_model import (
    DATASET_STREAM,
    DOUBLE_BOOT_STREAM,
    ToyConfig,
    _member,
    build_ensemble,
    default_workers,
    delta_boot_boot,
    delta_stderr_formula,
    double_bootstrap,
    generate_dataset,
    merge,
    sample_variance,
)

FIX_NOISE_STREAM, PSEUDO_STREAM, PSEUDO_NOISE_STREAM, INNER_STREAM = 4, 5, 6, 8

# Mean pairwise correlation in conditional studies looks at most this many members.
MAX_CORR_MEMBERS = 64


def _as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))


def _run_tasks(fn: Callable, items: Sequence, workers: int | None) -> list:
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(min(workers, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def _covered(error: float, delta: float) -> bool:
    # zero-width intervals cover only an exactly zero error
    return abs(error) <= delta


def _z(error: float, delta: float) -> float:
    if delta > 0:
        return abs(error) / delta
    return 0.0 if error == 0 else math.inf


def _var_se(x: np.ndarray) -> float:
    """Standard error of the sample variance, delta-method form."""
    r = x.size
    d = x - x.mean()
    m2 = np.mean(d**2)
    m4 = np.mean(d**4)
    return float(math.sqrt(max(m4 - m2**2 * (r - 3) / (r - 1), 0.0) / r))


def _mean_se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size))


def _cov_se(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    cov = np.mean(da * db)
    return float(math.sqrt(max(np.mean((da * db) ** 2) - cov**2, 0.0) / a.size))


def _prop_se(p: float, r: int) -> float:
    return math.sqrt(p * (1 - p) / r)


@dataclass
class ExperimentReport:
    theta_hat: float
    delta_boot_boot: float
    delta_stderr: float
    z_flawed: float
    z_true: float
    analytic: AnalyticMoments
    runtime_seconds: float
    seed: SeedSpec
    config: ToyConfig
    bias_corrected: bool = False
    redraws: int = 0

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "delta_boot_boot": self.delta_boot_boot,
            "delta_stderr": self.delta_stderr,
            "z_flawed": self.z_flawed,
            "z_true": self.z_true,
            "bias_corrected": self.bias_corrected,
            "redraws": self.redraws,
            "analytic": self.analytic.to_dict(),
        }


def run_single(
    config: ToyConfig, seed, bias_correct: bool = False, workers: int | None = None
) -> ExperimentReport:
    """One pass of the pipeline: dataset, ensemble, merge, double bootstrap, deltas."""
    seed = _as_seed(seed)
    workers = default_workers() if workers is None else workers
    start = time.perf_counter()
    dataset = generate_dataset(config, derive_rng(seed.child(DATASET_STREAM)))
    ensemble = build_ensemble(dataset, config, seed, workers=workers)
    theta_hat = merge(ensemble, config.merge_mode)
    boots = double_bootstrap(
        ensemble, config.k, derive_rng(seed.child(DOUBLE_BOOT_STREAM)), config.merge_mode
    )
    corrected = bias_correct and config.m > 1
    d_bb = delta_boot_boot(boots, corrected, config.m)
    d_se = delta_stderr_formula(ensemble) if config.m > 1 else 0.0
    analytic = compute_moments(config)
    error = theta_hat - config.theta
    return ExperimentReport(
        theta_hat=theta_hat,
        delta_boot_boot=d_bb,
        delta_stderr=d_se,
        z_flawed=_z(error, d_bb),
        z_true=_z(error, math.sqrt(analytic.var_boot_avg)),
        analytic=analytic,
        runtime_seconds=time.perf_counter() - start,
        seed=seed,
        config=config,
        bias_corrected=corrected,
        redraws=ensemble.redraws,
    )


def _fix_estimates(config: ToyConfig, dataset, seed: SeedSpec, b: int) -> tuple[float, float, float, float]:
    """Estimates and squared deltas of the two corrected procedures.

    plain:  one estimate (dataset mean + noise); its delta is the sd over b
            bootstrap pseudo-experiments, each with fresh noise.
    nested: M members on the unresampled dataset, merged; each
            pseudo-experiment repeats that build on its own resample.
    A pseudo-experiment's resample is shared by both procedures.
    """
    m = config.m
    base = dataset.mean()
    noise = derive_rng(seed.child(FIX_NOISE_STREAM)).normal(0.0, 1.0, 1 + m) * config.sigma_eps
    plain_est = base + noise[0]
    nested_est = merge(base + noise[1:], config.merge_mode)

    pseudo_noise = derive_rng(seed.child(PSEUDO_NOISE_STREAM)).normal(0.0, 1.0, (b, 1 + m))
    pseudo_noise *= config.sigma_eps
    pseudo_means = np.array(
        [
            _member(dataset, 0.0, config.resample_mode, derive_rng(seed.child(PSEUDO_STREAM, j)), 0.0)[0]
            for j in range(b)
        ]
    )
    plain_boot = pseudo_means + pseudo_noise[:, 0]
    nested_boot = merge(pseudo_means[:, None] + pseudo_noise[:, 1:], config.merge_mode)
    return plain_est, sample_variance(plain_boot), nested_est, sample_variance(nested_boot)


def _replicate_one(seed: SeedSpec, config: ToyConfig, b: int, bias_correct: bool) -> tuple:
    dataset = generate_dataset(config, derive_rng(seed.child(DATASET_STREAM)))
    ensemble = build_ensemble(dataset, config, seed)
    theta_hat = merge(ensemble, config.merge_mode)
    boots = double_bootstrap(
        ensemble, config.k, derive_rng(seed.child(DOUBLE_BOOT_STREAM)), config.merge_mode
    )
    corrected = bias_correct and config.m > 1
    d2_bb = delta_boot_boot(boots, corrected, config.m) ** 2
    d2_se = delta_stderr_formula(ensemble) ** 2 if config.m > 1 else 0.0
    pair = (ensemble.estimates[0], ensemble.estimates[1]) if config.m > 1 else (math.nan, math.nan)
    fixes = _fix_estimates(config, dataset, seed, b) if b >= 2 else (math.nan,) * 4
    return (theta_hat, d2_bb, d2_se, *pair, *fixes)


@dataclass
class ReplicationSummary:
    r: int
    mean_theta_hat: float
    empirical_var_theta_hat: float
    mean_delta2_boot_boot: float
    mean_delta2_stderr: float
    empirical_cov_pair: float | None
    empirical_cond_var: float | None
    coverage_flawed: float
    coverage_stderr: float
    coverage_true: float
    coverage_fixes: tuple[float, float] | None
    mean_delta2_fixes: tuple[float, float] | None
    median_z_flawed: float
    median_z_true: float
    delta2_ratio: float
    standard_errors: dict = field(default_factory=dict)
    analytic: AnalyticMoments | None = None
    b: int = 0
    bias_corrected: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["analytic"] = self.analytic.to_dict() if self.analytic else None
        for key in ("coverage_fixes", "mean_delta2_fixes"):
            if d[key] is not None:
                d[key] = {"plain": d[key][0], "nested": d[key][1]}
        return d


def run_replicated(
    config: ToyConfig,
    r: int,
    seed,
    b: int = 0,
    bias_correct: bool = False,
    workers: int | None = None,
) -> ReplicationSummary:
    """r independent end-to-end replications, each with a fresh dataset.

    With ``b >= 2`` every replication also runs both corrected procedures
    with b pseudo-experiments on the same dataset.
    """
    if r < 2:
        raise ValueError("r must be ≥ 2")
    if b == 1:
        raise ValueError("b must be 0 (no fixes) or ≥ 2")
    seed = _as_seed(seed)
    task = partial(_replicate_one, config=config, b=b, bias_correct=bias_correct)
    rows = np.array(_run_tasks(task, [seed.child(i) for i in range(r)], workers))
    theta_hat, d2_bb, d2_se, first, second = rows[:, :5].T
    analytic = compute_moments(config)
    true_sd = math.sqrt(analytic.var_boot_avg)
    error = theta_hat - config.theta

    cov_flawed = np.mean([_covered(e, math.sqrt(v)) for e, v in zip(error, d2_bb)])
    cov_stderr = np.mean([_covered(e, math.sqrt(v)) for e, v in zip(error, d2_se)])
    cov_true = np.mean([_covered(e, true_sd) for e in error])
    se = {
        "empirical_var_theta_hat": _var_se(theta_hat),
        "mean_theta_hat": _mean_se(theta_hat),
        "mean_delta2_boot_boot": _mean_se(d2_bb),
        "mean_delta2_stderr": _mean_se(d2_se),
        "coverage_flawed": _prop_se(cov_flawed, r),
        "coverage_stderr": _prop_se(cov_stderr, r),
        "coverage_true": _prop_se(cov_true, r),
    }
    cov_pair = None
    if config.m > 1:
        cov_pair = float(np.cov(first, second)[0, 1])
        se["empirical_cov_pair"] = _cov_se(first, second)

    coverage_fixes = mean_fixes = None
    if b >= 2:
        plain_est, plain_d2, nested_est, nested_d2 = rows[:, 5:9].T
        plain_cov = float(np.mean([_covered(e - config.theta, math.sqrt(v)) for e, v in zip(plain_est, plain_d2)]))
        nested_cov = float(np.mean([_covered(e - config.theta, math.sqrt(v)) for e, v in zip(nested_est, nested_d2)]))
        coverage_fixes = (plain_cov, nested_cov)
        mean_fixes = (float(plain_d2.mean()), float(nested_d2.mean()))
        se["coverage_fixes"] = {"plain": _prop_se(plain_cov, r), "nested": _prop_se(nested_cov, r)}
        se["mean_delta2_fixes"] = {"plain": _mean_se(plain_d2), "nested": _mean_se(nested_d2)}
        se["empirical_var_fix_estimates"] = {"plain": _var_se(plain_est), "nested": _var_se(nested_est)}

    d_bb = np.sqrt(d2_bb)
    return ReplicationSummary(
        r=r,
        mean_theta_hat=float(theta_hat.mean()),
        empirical_var_theta_hat=float(np.var(theta_hat, ddof=1)),
        mean_delta2_boot_boot=float(d2_bb.mean()),
        mean_delta2_stderr=float(d2_se.mean()),
        empirical_cov_pair=cov_pair,
        empirical_cond_var=None,
        coverage_flawed=float(cov_flawed),
        coverage_stderr=float(cov_stderr),
        coverage_true=float(cov_true),
        coverage_fixes=coverage_fixes,
        mean_delta2_fixes=mean_fixes,
        median_z_flawed=float(np.median([_z(e, d) for e, d in zip(error, d_bb)])),
        median_z_true=float(np.median(np.abs(error) / true_sd)) if true_sd > 0 else 0.0,
        delta2_ratio=float(d2_se.mean() / d2_bb.mean()) if d2_bb.mean() > 0 else math.nan,
        standard_errors=se,
        analytic=analytic,
        b=b,
        bias_corrected=bias_correct and config.m > 1,
    )


@dataclass
class ConditionalResult:
    cond_var: float
    cond_mean: float
    mean_pair_corr: float | None
    r_inner: int


def run_conditional(config: ToyConfig, r_inner: int, seed) -> ConditionalResult:
    """Hold one dataset fixed and rerun ensemble build + merge r_inner times.

    Returns the sample variance of the merged estimates (the spread given the
    dataset) and the mean pairwise correlation between members across runs,
    which should vanish: members are independent once the dataset is fixed.
    """
    if r_inner < 2:
        raise ValueError("r_inner must be ≥ 2")
    seed = _as_seed(seed)
    dataset = generate_dataset(config, derive_rng(seed.child(DATASET_STREAM)))
    members = np.empty((r_inner, config.m))
    merged = np.empty(r_inner)
    for i in range(r_inner):
        ensemble = build_ensemble(dataset, config, seed.child(INNER_STREAM, i))
        members[i] = ensemble.estimates
        merged[i] = merge(ensemble, config.merge_mode)
    corr = None
    if config.m > 1:
        sub = members[:, :MAX_CORR_MEMBERS]
        if np.all(sub.std(axis=0) > 0):
            c = np.corrcoef(sub, rowvar=False)
            corr = float(c[~np.eye(c.shape[0], dtype=bool)].mean())
    return ConditionalResult(sample_variance(merged), float(merged.mean()), corr, r_inner)


@dataclass
class ConditionalSummary:
    datasets: int
    r_inner: int
    empirical_cond_var: float
    empirical_cond_var_se: float
    var_of_cond_means: float
    empirical_mcstat: float
    total_var: float
    mean_pair_corr: float | None
    expected_cond_var: float
    mcstat_term: float

    def to_dict(self) -> dict:
        return asdict(self)


def run_conditional_study(
    config: ToyConfig, datasets: int, r_inner: int, seed, workers: int | None = None
) -> ConditionalSummary:
    """run_conditional over several datasets (dataset j under seed/j).

    The mean of the per-dataset spreads estimates E[Var[merged | D]]; the
    spread of the per-dataset means, less its inner-run noise, estimates the
    dataset (mc-stat) term. ``total_var`` pools every merged estimate.
    """
    if datasets < 2:
        raise ValueError("datasets must be ≥ 2")
    seed = _as_seed(seed)
    task = partial(run_conditional, config, r_inner)
    results = _run_tasks(task, [seed.child(j) for j in range(datasets)], workers)
    cond_vars = np.array([res.cond_var for res in results])
    cond_means = np.array([res.cond_mean for res in results])
    corrs = [res.mean_pair_corr for res in results if res.mean_pair_corr is not None]
    mean_cond_var = float(cond_vars.mean())
    var_means = float(np.var(cond_means, ddof=1))
    # ANOVA decomposition of the pooled variance
    total = (
        (r_inner - 1) * cond_vars.sum() + r_inner * ((cond_means - cond_means.mean()) ** 2).sum()
    ) / (datasets * r_inner - 1)
    analytic = compute_moments(config)
    return ConditionalSummary(
        datasets=datasets,
        r_inner=r_inner,
        empirical_cond_var=mean_cond_var,
        empirical_cond_var_se=_mean_se(cond_vars),
        var_of_cond_means=var_means,
        empirical_mcstat=var_means - mean_cond_var / r_inner,
        total_var=float(total),
        mean_pair_corr=float(np.mean(corrs)) if corrs else None,
        expected_cond_var=analytic.expected_cond_var,
        mcstat_term=analytic.mcstat_term,
    )


@dataclass
class DependenceResult:
    r: int
    empirical_cov_pair: float
    cov_se: float
    empirical_corr: float
    expected_cov_pair: float

    def to_dict(self) -> dict:
        return asdict(self)


def _pair_one(seed: SeedSpec, config: ToyConfig) -> tuple[float, float]:
    dataset = generate_dataset(config, derive_rng(seed.child(DATASET_STREAM)))
    e = build_ensemble(dataset, config, seed, m=2).estimates
    return e[0], e[1]


def run_dependence_study(config: ToyConfig, r: int, seed, workers: int | None = None) -> DependenceResult:
    """Covariance of two members of the same ensemble across fresh datasets.

    Only the first two members are built; member streams are prefix-stable,
    so they are the members a full M-member build would produce.
    """
    if r < 2:
        raise ValueError("r must be ≥ 2")
    seed = _as_seed(seed)
    pairs = np.array(_run_tasks(partial(_pair_one, config=config), [seed.child(i) for i in range(r)], workers))
    a, b = pairs.T
    cov = float(np.cov(a, b)[0, 1])
    sd = math.sqrt(np.var(a, ddof=1) * np.var(b, ddof=1))
    return DependenceResult(
        r=r,
        empirical_cov_pair=cov,
        cov_se=_cov_se(a, b),
        empirical_corr=cov / sd if sd > 0 else 0.0,
        expected_cov_pair=compute_moments(config).cov_pair,
    )


@dataclass
class ScalingResult:
    m_values: list[int]
    mean_delta: list[float]
    delta_se: list[float]
    slope: float
    slope_se: float
    r: int

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[dict]:
        return [
            {"m": m, "mean_delta_boot_boot": d, "se": s, "slope": self.slope}
            for m, d, s in zip(self.m_values, self.mean_delta, self.delta_se)
        ]


def _scaling_one(seed: SeedSpec, config: ToyConfig, m_values: tuple[int, ...]) -> list[float]:
    dataset = generate_dataset(config, derive_rng(seed.child(DATASET_STREAM)))
    ensemble = build_ensemble(dataset, config, seed, m=max(m_values))
    out = []
    for j, m in enumerate(m_values):
        boots = double_bootstrap(
            ensemble.prefix(m), config.k, derive_rng(seed.child(DOUBLE_BOOT_STREAM, j)), config.merge_mode
        )
        out.append(delta_boot_boot(boots))
    return out


def _loglog_slope(m_values, deltas) -> tuple[float, float]:
    deltas = np.asarray(deltas, float)
    if not np.all(deltas > 0):
        return math.nan, math.nan
    x, y = np.log(np.asarray(m_values, float)), np.log(deltas)
    if x.size < 3:
        return float(np.polyfit(x, y, 1)[0]), math.nan
    coef, cov = np.polyfit(x, y, 1, cov=True)
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def run_scaling_study(
    config: ToyConfig, m_values: Sequence[int], r: int, seed, workers: int | None = None
) -> ScalingResult:
    """Mean double-bootstrap delta versus ensemble size, plus the log-log slope.

    Each replication builds one ensemble of max(m_values) members and reads
    smaller ensembles off its prefixes.
    """
    m_values = tuple(int(m) for m in m_values)
    if not m_values or min(m_values) < 2:
        raise ValueError("every M in m_values must be ≥ 2")
    if r < 1:
        raise ValueError("r must be ≥ 1")
    seed = _as_seed(seed)
    task = partial(_scaling_one, config=config, m_values=m_values)
    deltas = np.array(_run_tasks(task, [seed.child(i) for i in range(r)], workers))
    mean = deltas.mean(axis=0)
    se = deltas.std(axis=0, ddof=1) / math.sqrt(r) if r > 1 else np.full(len(m_values), math.nan)
    slope, slope_se = _loglog_slope(m_values, mean) if len(m_values) > 1 else (math.nan, math.nan)
    return ScalingResult(list(m_values), mean.tolist(), se.tolist(), slope, slope_se, r)


@dataclass
class FixesRow:
    procedure: str
    mean_delta2: float
    mean_delta2_se: float
    expected_delta2: float
    true_var: float
    coverage: float
    coverage_se: float
    sd_ratio: float


@dataclass
class FixesResult:
    rows: list[FixesRow]
    summary: ReplicationSummary

    def to_dict(self) -> dict:
        return {"rows": [asdict(row) for row in self.rows], "summary": self.summary.to_dict()}


def run_fixes_study(
    config: ToyConfig, b: int, r: int, seed, bias_correct: bool = False, workers: int | None = None
) -> FixesResult:
    """Flawed estimates and both corrected procedures over the same r datasets.

    sd_ratio is sqrt(mean delta^2 / true variance); 1 means correctly sized.
    """
    if b < 2:
        raise ValueError("b must be ≥ 2")
    s = run_replicated(config, r, seed, b=b, bias_correct=bias_correct, workers=workers)
    a = s.analytic
    plain_exp, nested_exp = expected_fix_variances(config)
    plain_true, nested_true = true_fix_variances(config)
    se = s.standard_errors

    def ratio(d2, var):
        return math.sqrt(d2 / var) if var > 0 else (1.0 if d2 == 0 else math.inf)

    rows = [
        FixesRow("double-bootstrap", s.mean_delta2_boot_boot, se["mean_delta2_boot_boot"],
                 a.expected_delta2_boot_boot, a.var_boot_avg, s.coverage_flawed,
                 se["coverage_flawed"], ratio(s.mean_delta2_boot_boot, a.var_boot_avg)),
        FixesRow("stderr-formula", s.mean_delta2_stderr, se["mean_delta2_stderr"],
                 a.expected_delta2_stderr, a.var_boot_avg, s.coverage_stderr,
                 se["coverage_stderr"], ratio(s.mean_delta2_stderr, a.var_boot_avg)),
        FixesRow("plain-bootstrap", s.mean_delta2_fixes[0], se["mean_delta2_fixes"]["plain"],
                 plain_exp, plain_true, s.coverage_fixes[0],
                 se["coverage_fixes"]["plain"], ratio(s.mean_delta2_fixes[0], plain_true)),
        FixesRow("nested-ensemble", s.mean_delta2_fixes[1], se["mean_delta2_fixes"]["nested"],
                 nested_exp, nested_true, s.coverage_fixes[1],
                 se["coverage_fixes"]["nested"], ratio(s.mean_delta2_fixes[1], nested_true)),
    ]
    return FixesResult(rows, s)
