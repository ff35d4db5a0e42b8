"""Point estimators: TWFE, outcome regression, IPW, and doubly robust.

Every estimator targets one observation time m of a comparison frame and
is aggregated over named windows of m-times by :func:`estimate_effects`.
All estimators accept optional fractional unit weights (used by the
Bayesian bootstrap) and are pure functions of their inputs.

The IPW/DR weights follow the ratio form w = (R - p) / (P(R=1)(1 - p)):
exposed units get 1 / P(R=1) and control units get -odds / P(R=1), with
P(R=1) estimated by the sample share.  Control weights are rescaled so the
frame's weights sum exactly to zero (the empirical counterpart of
E[w] = 0); the rescaling is a no-op whenever the fitted odds are already
calibrated to the exposed count, e.g. for a constant propensity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateComparisonError,
    NonoverlapError,
    UnstableRatioError,
    WindowBoundsError,
)
from .nuisance import NuisanceSet, TIME_INVARIANT, fit_nuisances, fit_ols
from .panel import ComparisonFrame

PROPENSITY_EPS = 1e-6
METHODS = ("twfe", "or", "ipw", "dr")

ADDITIVE = "additive"
RELATIVE = "relative"


@dataclass(frozen=True)
class WeightVector:
    """Per-unit balancing weights for one observation time.

    Exposed units carry ``1 / p_r``; control units carry non-positive
    weights proportional to minus their fitted odds, scaled so the
    (unit-weighted) frame total is zero.
    """

    w: np.ndarray
    p_r: float

    @property
    def n_units(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class EffectEstimate:
    """Per-m effects plus named window aggregates for one estimand/method."""

    estimand: str
    method: str
    per_m: np.ndarray
    aggregates: dict[str, float]
    scale: str = ADDITIVE

    @property
    def n_m(self) -> int:
        return self.per_m.shape[0]


def resolve_windows(n_m: int, windows: Mapping[str, Sequence[int]] | str | None) -> dict[str, tuple[int, ...]]:
    """Turn a windows argument into a validated name -> (1-based m) mapping.

    Strings select a preset: ``annual`` (one window covering 1..n_m),
    ``seasonal`` (the 3/3/3/4 calendar split plus Annual, only defined for
    n_m = 13), or ``all-m`` (one singleton window per observation time).
    """
    if windows is None or windows == "annual":
        return {"Annual": tuple(range(1, n_m + 1))}
    if windows == "seasonal":
        if n_m != 13:
            raise WindowBoundsError(f"seasonal windows require n_m=13 observation times, dataset has {n_m}")
        return {
            "Winter": (1, 2, 3),
            "Spring": (4, 5, 6),
            "Summer": (7, 8, 9),
            "Fall": (10, 11, 12, 13),
            "Annual": tuple(range(1, 14)),
        }
    if windows == "all-m":
        return {f"m={m}": (m,) for m in range(1, n_m + 1)}
    if isinstance(windows, str):
        raise WindowBoundsError(f"unknown window preset {windows!r}; expected annual, seasonal, or all-m")
    out = {}
    for name, ms in windows.items():
        ms = tuple(int(m) for m in ms)
        if not ms:
            raise WindowBoundsError(f"window {name!r} is empty")
        for m in ms:
            if not 1 <= m <= n_m:
                raise WindowBoundsError(f"window {name!r} references m={m}, valid range is 1..{n_m}")
        out[name] = ms
    return out


def _unit_weights(frame: ComparisonFrame, unit_weights: np.ndarray | None) -> np.ndarray:
    if unit_weights is None:
        return np.ones(frame.n_units)
    u = np.asarray(unit_weights, dtype=float)
    if u.shape[0] != frame.n_units:
        raise ValueError(f"unit weights have length {u.shape[0]}, frame has {frame.n_units} units")
    return u


def _wmean(values: np.ndarray, u: np.ndarray) -> float:
    return float(np.sum(u * values) / np.sum(u))


def compute_weights(
    frame: ComparisonFrame,
    nuisances: NuisanceSet,
    m: int,
    unit_weights: np.ndarray | None = None,
) -> WeightVector:
    """Balancing weights at observation time ``m`` (0-based).

    Raises :class:`NonoverlapError` naming the offending units when any
    fitted propensity reaches 1 - 1e-6, which signals a positivity
    violation and would make the weights explode.
    """
    u = _unit_weights(frame, unit_weights)
    pi = nuisances.predict_pi(frame, m)
    exposed = frame.r == 1
    bad = pi >= 1.0 - PROPENSITY_EPS
    if bad.any():
        ids = [frame.unit_ids[i] for i in np.flatnonzero(bad)[:10]]
        raise NonoverlapError(
            f"{int(bad.sum())} unit(s) have fitted propensity >= {1 - PROPENSITY_EPS}; "
            f"first offenders: {', '.join(ids)}",
            unit_ids=ids,
        )
    p_r = _wmean(frame.r, u)
    odds = pi / (1.0 - pi)
    w = np.empty(frame.n_units)
    w[exposed] = 1.0 / p_r
    total_exposed = float(np.sum(u[exposed]))
    total_odds = float(np.sum((u * odds)[~exposed]))
    calibration = total_exposed / total_odds
    w[~exposed] = -odds[~exposed] * calibration / p_r
    return WeightVector(w=w, p_r=p_r)


def estimate_twfe(
    frame: ComparisonFrame,
    m: int,
    covariates: Sequence[str] | None = None,
    unit_weights: np.ndarray | None = None,
) -> float:
    """Interaction coefficient from the two-way fixed-effects regression.

    Stacks the 2n rows for periods (0, m) and (1, m) and regresses the
    outcome on an intercept, the covariates, a period indicator, a group
    indicator, and their interaction; the interaction coefficient is
    returned.  With time-invariant covariates this equals the
    difference-in-means DiD exactly.
    """
    u = _unit_weights(frame, unit_weights)
    xm = frame.design(m, covariates)
    names = tuple(covariates) if covariates is not None else frame.covariate_names
    n = frame.n_units
    period = np.concatenate([np.zeros(n), np.ones(n)])
    group = np.concatenate([frame.r, frame.r])
    design = np.column_stack([np.vstack([xm, xm]), period, group, period * group])
    y = np.concatenate([frame.pre_y[:, m], frame.post_y[:, m]])
    model = fit_ols(
        design,
        y,
        weights=np.concatenate([u, u]),
        covariate_names=(*names, "period", "exposed", "exposed_post"),
    )
    return float(model.coefficients[-1])


def estimate_or(
    frame: ComparisonFrame,
    nuisances: NuisanceSet,
    m: int,
    unit_weights: np.ndarray | None = None,
) -> float:
    """Outcome-regression estimate: mean over exposed units of the outcome
    change minus its imputed counterfactual."""
    u = _unit_weights(frame, unit_weights)
    exposed = frame.r == 1
    resid = frame.delta_y[:, m] - nuisances.predict_mu(frame, m)
    return _wmean(resid[exposed], u[exposed])


def estimate_ipw(
    frame: ComparisonFrame,
    nuisances: NuisanceSet,
    m: int,
    unit_weights: np.ndarray | None = None,
) -> float:
    """Inverse probability weighted estimate: weighted mean of the outcome
    change over the whole frame."""
    u = _unit_weights(frame, unit_weights)
    wv = compute_weights(frame, nuisances, m, unit_weights)
    return _wmean(wv.w * frame.delta_y[:, m], u)


def estimate_dr(
    frame: ComparisonFrame,
    nuisances: NuisanceSet,
    m: int,
    unit_weights: np.ndarray | None = None,
) -> float:
    """Doubly robust estimate combining the weights with the outcome model."""
    u = _unit_weights(frame, unit_weights)
    wv = compute_weights(frame, nuisances, m, unit_weights)
    resid = frame.delta_y[:, m] - nuisances.predict_mu(frame, m)
    return _wmean(wv.w * resid, u)


def _estimate_one(
    frame: ComparisonFrame,
    nuisances: NuisanceSet | None,
    method: str,
    m: int,
    twfe_covariates: Sequence[str] | None,
    unit_weights: np.ndarray | None,
) -> float:
    if method == "twfe":
        return estimate_twfe(frame, m, twfe_covariates, unit_weights)
    if nuisances is None:
        raise ValueError(f"method {method!r} requires fitted nuisances")
    if method == "or":
        return estimate_or(frame, nuisances, m, unit_weights)
    if method == "ipw":
        return estimate_ipw(frame, nuisances, m, unit_weights)
    if method == "dr":
        return estimate_dr(frame, nuisances, m, unit_weights)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def estimate_effects(
    frame: ComparisonFrame,
    nuisances: NuisanceSet | None,
    method: str,
    windows: Mapping[str, Sequence[int]] | str | None = None,
    twfe_covariates: Sequence[str] | None = None,
    unit_weights: np.ndarray | None = None,
) -> EffectEstimate:
    """Per-m effects for one method plus window aggregates.

    Each additive aggregate is the arithmetic mean of its window's per-m
    effects.  ``windows`` accepts a preset name or an explicit mapping of
    window name to 1-based m indices.
    """
    win = resolve_windows(frame.n_m, windows)
    per_m = np.array(
        [_estimate_one(frame, nuisances, method, m, twfe_covariates, unit_weights) for m in range(frame.n_m)]
    )
    aggregates = {name: float(np.mean(per_m[[m - 1 for m in ms]])) for name, ms in win.items()}
    return EffectEstimate(estimand=frame.estimand, method=method, per_m=per_m, aggregates=aggregates)


def pretrend_frame(frame: ComparisonFrame, m: int) -> ComparisonFrame:
    """Pseudo-period frame comparing pre-period time ``m`` against time 1.

    Pre-period time 1 plays the pre role and time ``m`` (1-based) the post
    role, so the frame's outcome change is Y(0, m) - Y(0, 1).  Covariates
    use the slice at ``m``; the baseline slice is kept for time-invariant
    propensity fits.
    """
    if m == 1:
        raise DegenerateComparisonError("pre-trends comparison needs m >= 2; m=1 compares time 1 with itself")
    if not 2 <= m <= frame.n_m:
        raise WindowBoundsError(f"pre-trends m={m} out of range 2..{frame.n_m}")
    j = m - 1
    return ComparisonFrame(
        estimand=frame.estimand,
        unit_ids=frame.unit_ids,
        strata=frame.strata,
        r=frame.r,
        delta_y=frame.pre_y[:, [j]] - frame.pre_y[:, [0]],
        pre_y=frame.pre_y[:, [0]],
        post_y=frame.pre_y[:, [j]],
        x=frame.x[:, [j], :],
        x_base=frame.x_base,
        covariate_names=frame.covariate_names,
        source_index=frame.source_index,
    )


def estimate_pretrends(
    frame: ComparisonFrame,
    method: str,
    m: int,
    ps_mode: str = TIME_INVARIANT,
    mu_covariates: Sequence[str] | None = None,
    pi_covariates: Sequence[str] | None = None,
    unit_weights: np.ndarray | None = None,
) -> float:
    """Placebo effect between pre-period times 1 and ``m`` (1-based, >= 2).

    Runs the chosen estimator on the pseudo-period frame with nuisances
    refit on those pseudo periods; zero in expectation under parallel
    pre-trends.
    """
    pseudo = pretrend_frame(frame, m)
    nuis = None
    if method != "twfe":
        nuis = fit_nuisances(pseudo, ps_mode, mu_covariates, pi_covariates, unit_weights)
    return _estimate_one(pseudo, nuis, method, 0, mu_covariates, unit_weights)


def estimate_relative(
    frame: ComparisonFrame,
    nuisances: NuisanceSet,
    windows: Mapping[str, Sequence[int]] | str | None = None,
    unit_weights: np.ndarray | None = None,
) -> EffectEstimate:
    """Relative (multiplicative) effect: observed exposed post-period mean
    divided by its doubly robust counterfactual.

    Per m the ratio equals mean(Y1 | exposed) / (mean(Y1 | exposed) - dr(m)).
    Window aggregates pool numerators and denominators over the window
    before dividing, which is stabler than averaging per-m ratios.
    """
    u = _unit_weights(frame, unit_weights)
    win = resolve_windows(frame.n_m, windows)
    p_r = _wmean(frame.r, u)
    numerators = np.empty(frame.n_m)
    denominators = np.empty(frame.n_m)
    for m in range(frame.n_m):
        numerators[m] = _wmean(frame.r * frame.post_y[:, m], u)
        tau_dr = estimate_dr(frame, nuisances, m, unit_weights)
        denominators[m] = numerators[m] - p_r * tau_dr
    scale_ref = max(1.0, float(np.max(np.abs(numerators))))
    if np.any(np.abs(denominators) <= 1e-9 * scale_ref):
        bad = int(np.argmin(np.abs(denominators))) + 1
        raise UnstableRatioError(f"relative-effect denominator at m={bad} is too close to zero")
    per_m = numerators / denominators
    aggregates = {}
    for name, ms in win.items():
        idx = [m - 1 for m in ms]
        den = float(np.sum(denominators[idx]))
        if abs(den) <= 1e-9 * scale_ref:
            raise UnstableRatioError(f"relative-effect denominator for window {name!r} is too close to zero")
        aggregates[name] = float(np.sum(numerators[idx]) / den)
    return EffectEstimate(
        estimand=frame.estimand, method="dr", per_m=per_m, aggregates=aggregates, scale=RELATIVE
    )
