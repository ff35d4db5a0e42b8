"""Confidence intervals: stratified bootstrap, Bayesian bootstrap, and the
influence-function parametric variance.

The stratified bootstrap resamples whole units with replacement within
each stratum, keeping every stratum at its original size; a unit's entire
outcome matrix and covariates travel together.  The Bayesian bootstrap
draws exponential unit weights instead of resampling.  Replicate RNG
streams are derived from the seed by replicate index, so results are
bit-identical across worker counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._parallel import parallel_map
from .analysis import AnalysisSpec, build_frame, fit_frame_nuisances, run_estimate, run_pretrend
from .errors import EstimationError, InferenceUnstableError, SchemaError
from .estimators import EffectEstimate, compute_weights, estimate_dr, pretrend_frame, resolve_windows
from .nuisance import NuisanceSet, fit_nuisances
from .panel import ComparisonFrame, PanelDataset

STRATIFIED = "stratified"
BAYESIAN = "bayesian"

Z_95 = 1.96


@dataclass(frozen=True)
class BootstrapSpec:
    """Bootstrap configuration; ``flavor`` is stratified or bayesian."""

    replicates: int = 500
    seed: int = 0
    flavor: str = STRATIFIED
    level: float = 0.95
    max_failure_rate: float = 0.10

    def __post_init__(self):
        if self.replicates < 2:
            raise SchemaError("bootstrap needs at least 2 replicates")
        if self.flavor not in (STRATIFIED, BAYESIAN):
            raise SchemaError(f"unknown bootstrap flavor {self.flavor!r}")
        if not 0.0 < self.level < 1.0:
            raise SchemaError("confidence level must be in (0, 1)")


@dataclass(frozen=True)
class IntervalEstimate:
    """Point estimate with interval bounds (lower <= upper)."""

    point: float
    lower: float
    upper: float
    level: float = 0.95
    method: str = "percentile_bootstrap"


@dataclass(frozen=True)
class BootstrapResult:
    """Point estimate plus intervals per window and per observation time."""

    point: EffectEstimate
    intervals: dict[str, IntervalEstimate]
    per_m: tuple[IntervalEstimate, ...]
    n_failed: int
    n_replicates: int


def stratified_resample(
    dataset: PanelDataset,
    rng: np.random.Generator,
    strata: Sequence[str] | None = None,
) -> PanelDataset:
    """Resample units with replacement within each stratum.

    Every stratum retains exactly its original size; resampled units get
    fresh unique ids so downstream diagnostics never alias two draws of
    the same source unit.
    """
    labels = tuple(strata) if strata is not None else dataset.strata
    if len(labels) != dataset.n_units:
        raise SchemaError("strata labels must cover all units")
    order: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(labels):
        if s not in groups:
            groups[s] = []
            order.append(s)
        groups[s].append(i)
    picks: list[int] = []
    for s in order:
        idx = groups[s]
        draws = rng.integers(0, len(idx), size=len(idx))
        picks.extend(idx[d] for d in draws)
    fresh = tuple(f"{dataset.unit_ids[i]}#b{k}" for k, i in enumerate(picks))
    return dataset.subset(np.asarray(picks, dtype=int), rename=fresh)


def bayesian_weights(dataset: PanelDataset, rng: np.random.Generator) -> np.ndarray:
    """Independent standard-exponential unit weights normalized to mean 1."""
    w = rng.standard_exponential(dataset.n_units)
    return w / w.mean()


def _percentile_interval(values: np.ndarray, point: float, level: float) -> IntervalEstimate:
    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(values, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return IntervalEstimate(point=point, lower=float(lower), upper=float(upper), level=level)


def _replicate_seeds(spec: BootstrapSpec) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(spec.seed).spawn(spec.replicates)


def bootstrap_ci(
    dataset: PanelDataset,
    analysis: AnalysisSpec,
    spec: BootstrapSpec,
    n_jobs: int | None = None,
) -> BootstrapResult:
    """Percentile intervals from re-running the full pipeline per replicate.

    Nuisances are refit inside every replicate.  Window aggregation happens
    within each replicate and percentiles are taken of the aggregates, so
    correlation between per-m estimates is carried through automatically.
    Replicates whose estimation fails are excluded and counted; more than
    ``max_failure_rate`` failures raises :class:`InferenceUnstableError`.
    """
    point = run_estimate(dataset, analysis)
    win_names = list(point.aggregates)

    def one(seed_seq: np.random.SeedSequence):
        rng = np.random.default_rng(seed_seq)
        try:
            if spec.flavor == STRATIFIED:
                est = run_estimate(stratified_resample(dataset, rng), analysis)
            else:
                est = run_estimate(dataset, analysis, unit_weights=bayesian_weights(dataset, rng))
            return est.per_m, [est.aggregates[name] for name in win_names]
        except EstimationError as err:
            return str(err)

    results = parallel_map(one, _replicate_seeds(spec), n_jobs=n_jobs)
    failures = [r for r in results if isinstance(r, str)]
    kept = [r for r in results if not isinstance(r, str)]
    _check_failures(failures, spec)

    per_m_mat = np.array([r[0] for r in kept])
    agg_mat = np.array([r[1] for r in kept])
    intervals = {
        name: _percentile_interval(agg_mat[:, j], point.aggregates[name], spec.level)
        for j, name in enumerate(win_names)
    }
    per_m = tuple(
        _percentile_interval(per_m_mat[:, m], float(point.per_m[m]), spec.level) for m in range(point.n_m)
    )
    return BootstrapResult(
        point=point, intervals=intervals, per_m=per_m, n_failed=len(failures), n_replicates=spec.replicates
    )


def bootstrap_pretrend_ci(
    dataset: PanelDataset,
    analysis: AnalysisSpec,
    m: int,
    spec: BootstrapSpec,
    n_jobs: int | None = None,
) -> tuple[IntervalEstimate, int]:
    """Percentile interval for the pre-trends placebo effect at time ``m``."""
    point = run_pretrend(dataset, analysis, m)

    def one(seed_seq: np.random.SeedSequence):
        rng = np.random.default_rng(seed_seq)
        try:
            if spec.flavor == STRATIFIED:
                return run_pretrend(stratified_resample(dataset, rng), analysis, m)
            return run_pretrend(dataset, analysis, m, unit_weights=bayesian_weights(dataset, rng))
        except EstimationError as err:
            return str(err)

    results = parallel_map(one, _replicate_seeds(spec), n_jobs=n_jobs)
    failures = [r for r in results if isinstance(r, str)]
    values = np.array([r for r in results if not isinstance(r, str)])
    _check_failures(failures, spec)
    return _percentile_interval(values, point, spec.level), len(failures)


def _check_failures(failures: list[str], spec: BootstrapSpec) -> None:
    if len(failures) > spec.max_failure_rate * spec.replicates:
        sample = "; ".join(sorted(set(failures))[:3])
        raise InferenceUnstableError(
            f"{len(failures)} of {spec.replicates} bootstrap replicates failed "
            f"(cap {spec.max_failure_rate:.0%}); example causes: {sample}"
        )


def parametric_variance(
    frame: ComparisonFrame,
    nuisances: NuisanceSet,
    m: int,
    unit_weights: np.ndarray | None = None,
) -> float:
    """Influence-function variance of the doubly robust estimate at ``m``.

    The estimated influence contribution is
    ``w_i (dy_im - mu_m(x_i)) - (r_i / p_r) tau_dr(m)``; its empirical mean
    is zero by construction and the variance of the estimate is
    ``mean(psi^2) / n``.
    """
    u = np.ones(frame.n_units) if unit_weights is None else np.asarray(unit_weights, dtype=float)
    wv = compute_weights(frame, nuisances, m, unit_weights)
    tau = estimate_dr(frame, nuisances, m, unit_weights)
    resid = frame.delta_y[:, m] - nuisances.predict_mu(frame, m)
    psi = wv.w * resid - (frame.r / wv.p_r) * tau
    n = float(np.sum(u))
    return float(np.sum(u * psi**2) / n / n)


@dataclass(frozen=True)
class ParametricResult:
    point: EffectEstimate
    intervals: dict[str, IntervalEstimate]
    per_m: tuple[IntervalEstimate, ...]


def parametric_cis(dataset: PanelDataset, analysis: AnalysisSpec, level: float = 0.95) -> ParametricResult:
    """Normal-theory intervals for the DR estimator.

    Window variances assume the per-m effects are independent, so the
    window variance is the sum of per-m variances divided by the squared
    window size, and intervals are point +/- 1.96 standard errors.
    """
    if analysis.method != "dr" or analysis.scale != "additive":
        raise EstimationError("parametric intervals are defined for the additive doubly robust estimator")
    frame = build_frame(dataset, analysis)
    nuisances = fit_frame_nuisances(frame, analysis)
    point = run_estimate(dataset, analysis)
    variances = np.array([parametric_variance(frame, nuisances, m) for m in range(frame.n_m)])
    win = resolve_windows(frame.n_m, analysis.windows)
    intervals = {}
    for name, ms in win.items():
        idx = [m - 1 for m in ms]
        var_w = float(np.sum(variances[idx]) / len(idx) ** 2)
        half = Z_95 * np.sqrt(var_w)
        agg = point.aggregates[name]
        intervals[name] = IntervalEstimate(agg, agg - half, agg + half, level=level, method="parametric")
    per_m = tuple(
        IntervalEstimate(
            float(point.per_m[m]),
            float(point.per_m[m] - Z_95 * np.sqrt(variances[m])),
            float(point.per_m[m] + Z_95 * np.sqrt(variances[m])),
            level=level,
            method="parametric",
        )
        for m in range(frame.n_m)
    )
    return ParametricResult(point=point, intervals=intervals, per_m=per_m)


def parametric_pretrend_ci(
    dataset: PanelDataset, analysis: AnalysisSpec, m: int, level: float = 0.95
) -> IntervalEstimate:
    """Normal-theory interval for the DR pre-trends placebo at time ``m``."""
    if analysis.method != "dr":
        raise EstimationError("parametric intervals are defined for the doubly robust estimator")
    frame = build_frame(dataset, analysis)
    pseudo = pretrend_frame(frame, m)
    nuisances = fit_nuisances(pseudo, analysis.ps_mode, analysis.mu_covariates, analysis.pi_covariates)
    var = parametric_variance(pseudo, nuisances, 0)
    point = estimate_dr(pseudo, nuisances, 0)
    half = Z_95 * np.sqrt(var)
    return IntervalEstimate(point, point - half, point + half, level=level, method="parametric")
