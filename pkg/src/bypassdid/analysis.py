"""Dataset-level estimation pipeline shared by the CLI, the bootstrap, and
the simulation harness: comparison frame -> nuisance fits -> estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EstimationError
from .estimators import (
    ADDITIVE,
    METHODS,
    RELATIVE,
    EffectEstimate,
    estimate_effects,
    estimate_pretrends,
    estimate_relative,
)
from .nuisance import TIME_INVARIANT, NuisanceSet, fit_nuisances
from .panel import ComparisonFrame, PanelDataset, make_comparison


@dataclass(frozen=True)
class AnalysisSpec:
    """Everything needed to reproduce one estimation run.

    ``windows`` is a preset name (annual, seasonal, all-m) or an explicit
    mapping; covariate subsets default to every covariate in the data.
    TWFE uses ``mu_covariates`` as its regression covariates.
    """

    estimand: str = "att"
    method: str = "dr"
    ps_mode: str = TIME_INVARIANT
    mu_covariates: tuple[str, ...] | None = None
    pi_covariates: tuple[str, ...] | None = None
    windows: Mapping[str, Sequence[int]] | str | None = "annual"
    scale: str = ADDITIVE

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.scale == RELATIVE and self.method != "dr":
            raise EstimationError("relative-scale effects are defined through the doubly robust estimator; use method 'dr'")

    def items(self) -> dict[str, object]:
        return {
            "estimand": self.estimand,
            "method": self.method,
            "ps_mode": self.ps_mode,
            "mu_covariates": "all" if self.mu_covariates is None else ",".join(self.mu_covariates),
            "pi_covariates": "all" if self.pi_covariates is None else ",".join(self.pi_covariates),
            "windows": self.windows if isinstance(self.windows, (str, type(None))) else dict(self.windows),
            "scale": self.scale,
        }


def build_frame(dataset: PanelDataset, spec: AnalysisSpec) -> ComparisonFrame:
    return make_comparison(dataset, spec.estimand)


def _frame_weights(frame: ComparisonFrame, unit_weights: np.ndarray | None) -> np.ndarray | None:
    """Align dataset-level unit weights with a frame that dropped units."""
    if unit_weights is None:
        return None
    w = np.asarray(unit_weights, dtype=float)
    return w[frame.source_index]


def fit_frame_nuisances(
    frame: ComparisonFrame, spec: AnalysisSpec, unit_weights: np.ndarray | None = None
) -> NuisanceSet | None:
    if spec.method == "twfe" and spec.scale == ADDITIVE:
        return None
    return fit_nuisances(frame, spec.ps_mode, spec.mu_covariates, spec.pi_covariates, unit_weights)


def run_estimate(
    dataset: PanelDataset, spec: AnalysisSpec, unit_weights: np.ndarray | None = None
) -> EffectEstimate:
    """Full pipeline on a dataset: frame, nuisance fits, effect estimate.

    ``unit_weights`` are aligned with the dataset's units (the Bayesian
    bootstrap draws them at the dataset level).
    """
    frame = build_frame(dataset, spec)
    w = _frame_weights(frame, unit_weights)
    nuisances = fit_frame_nuisances(frame, spec, w)
    if spec.scale == RELATIVE:
        return estimate_relative(frame, nuisances, spec.windows, w)
    return estimate_effects(
        frame, nuisances, spec.method, spec.windows, twfe_covariates=spec.mu_covariates, unit_weights=w
    )


def run_pretrend(
    dataset: PanelDataset, spec: AnalysisSpec, m: int, unit_weights: np.ndarray | None = None
) -> float:
    """Placebo effect between pre-period observation times 1 and m."""
    frame = build_frame(dataset, spec)
    return estimate_pretrends(
        frame,
        spec.method,
        m,
        ps_mode=spec.ps_mode,
        mu_covariates=spec.mu_covariates,
        pi_covariates=spec.pi_covariates,
        unit_weights=_frame_weights(frame, unit_weights),
    )
