"""Nuisance models: per-m outcome-trend regressions and propensity models.

The outcome-trend model for observation time m is an OLS fit of the
control units' outcome change on covariates; the propensity model is a
logistic regression of exposure-group membership fitted by iteratively
reweighted least squares.  Both support fractional unit weights so the
Bayesian bootstrap can reuse them unchanged.

Covariates are centered and scaled internally (by training-set moments)
before solving, and coefficients are mapped back to the raw scale; this
improves conditioning without changing fitted values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import (
    DegenerateResponseError,
    SeparationError,
    SingularDesignError,
    UnderdeterminedError,
)
from .panel import ComparisonFrame

SCORE_TOL = 1e-8
MAX_ITERATIONS = 100
COEF_CAP = 1e4

TIME_INVARIANT = "time_invariant"
PER_M = "per_m"


@dataclass(frozen=True)
class LinearModel:
    """OLS fit; ``coefficients[0]`` is the intercept."""

    coefficients: np.ndarray
    covariate_names: tuple[str, ...]

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.coefficients[0] + x @ self.coefficients[1:]


@dataclass(frozen=True)
class LogisticModel:
    """Logistic MLE; ``coefficients[0]`` is the intercept."""

    coefficients: np.ndarray
    covariate_names: tuple[str, ...]
    converged: bool
    iterations: int

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return expit(self.coefficients[0] + x @ self.coefficients[1:])


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted nuisances for one comparison frame.

    ``mu[m]`` is fit on control units only; ``pi`` is either a single
    time-invariant model (fit on baseline covariates) or one model per m.
    """

    mu: tuple[LinearModel, ...]
    pi: LogisticModel | tuple[LogisticModel, ...]
    mu_covariates: tuple[str, ...]
    pi_covariates: tuple[str, ...]
    ps_mode: str

    def pi_for(self, m: int) -> LogisticModel:
        if isinstance(self.pi, LogisticModel):
            return self.pi
        return self.pi[m]

    def predict_mu(self, frame: ComparisonFrame, m: int) -> np.ndarray:
        return self.mu[m].predict(frame.design(m, self.mu_covariates))

    def predict_pi(self, frame: ComparisonFrame, m: int) -> np.ndarray:
        if isinstance(self.pi, LogisticModel):
            return self.pi.predict_proba(frame.design_base(self.pi_covariates))
        return self.pi[m].predict_proba(frame.design(m, self.pi_covariates))


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale == 0, 1.0, scale)
    return (x - center) / scale, center, scale


def _unstandardize_coef(beta_std: np.ndarray, center: np.ndarray, scale: np.ndarray) -> np.ndarray:
    coef = np.empty_like(beta_std)
    coef[1:] = beta_std[1:] / scale
    coef[0] = beta_std[0] - float(center @ coef[1:])
    return coef


def _names(x: np.ndarray, covariate_names: Sequence[str] | None) -> tuple[str, ...]:
    if covariate_names is None:
        return tuple(f"x{j + 1}" for j in range(x.shape[1]))
    return tuple(covariate_names)


def _check_rank(z: np.ndarray, names: tuple[str, ...], context: str) -> None:
    design = np.column_stack([np.ones(z.shape[0]), z])
    r = np.linalg.matrix_rank(design)
    if r < design.shape[1]:
        _, _, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
        bad = sorted(piv[r:])
        labels = ["intercept" if j == 0 else names[j - 1] for j in bad]
        raise SingularDesignError(
            f"{context}: design matrix is rank deficient (rank {r} of {design.shape[1]}); "
            f"offending column(s): {', '.join(labels)}",
            columns=[n for n in labels if n != "intercept"],
        )


def fit_ols(
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    covariate_names: Sequence[str] | None = None,
) -> LinearModel:
    """Least-squares fit of ``y`` on an intercept plus the columns of ``x``.

    Solved through an orthogonal decomposition (SVD), never the normal
    equations.  Raises :class:`UnderdeterminedError` when there are fewer
    rows than coefficients and :class:`SingularDesignError` naming the
    offending column(s) when the design is rank deficient.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    names = _names(x, covariate_names)
    if n < p + 1:
        raise UnderdeterminedError(f"{n} observations for {p + 1} coefficients")
    z, center, scale = _standardize(x)
    design = np.column_stack([np.ones(n), z])
    target = y
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        sw = np.sqrt(w)
        design = design * sw[:, None]
        target = y * sw
    beta_std, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < p + 1:
        _check_rank(z if weights is None else z * np.sqrt(weights)[:, None], names, "fit_ols")
        raise SingularDesignError("fit_ols: design matrix is rank deficient")
    return LinearModel(coefficients=_unstandardize_coef(beta_std, center, scale), covariate_names=names)


def _log_likelihood(r: np.ndarray, eta: np.ndarray, w: np.ndarray) -> float:
    # log L = sum w * (r * eta - log(1 + exp(eta))), stable via logaddexp
    return float(np.sum(w * (r * eta - np.logaddexp(0.0, eta))))


def fit_logistic(
    x: np.ndarray,
    r: np.ndarray,
    weights: np.ndarray | None = None,
    covariate_names: Sequence[str] | None = None,
    score_tol: float = SCORE_TOL,
    max_iterations: int = MAX_ITERATIONS,
    coef_cap: float = COEF_CAP,
) -> LogisticModel:
    """Logistic MLE of binary ``r`` on an intercept plus ``x``, via IRLS.

    Newton/IRLS steps with step-halving whenever the log-likelihood would
    decrease.  Convergence requires the raw-scale score to satisfy
    ``max |X'(r - p)| < score_tol``; hitting the iteration cap returns
    ``converged=False``.  A raw coefficient norm above ``coef_cap`` raises
    :class:`SeparationError` since the MLE is then diverging.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    r = np.asarray(r, dtype=float)
    n, p = x.shape
    names = _names(x, covariate_names)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if n < p + 1:
        raise UnderdeterminedError(f"{n} observations for {p + 1} coefficients")
    pos = float(w[r == 1].sum()) if (r == 1).any() else 0.0
    neg = float(w[r == 0].sum()) if (r == 0).any() else 0.0
    if pos <= 0 or neg <= 0:
        raise DegenerateResponseError("response contains a single class; propensity model cannot be fit")

    z, center, scale = _standardize(x)
    design = np.column_stack([np.ones(n), z])
    design_raw = np.column_stack([np.ones(n), x])
    beta = np.zeros(p + 1)
    beta[0] = float(np.log(pos / neg))
    eta = design @ beta
    loglik = _log_likelihood(r, eta, w)

    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        prob = expit(eta)
        if np.max(np.abs(r - prob)) < 1e-6:
            # every response is predicted to machine saturation: the MLE is
            # diverging along a separating direction
            raise SeparationError(
                "fit_logistic: fitted probabilities saturated at 0/1 for every "
                "observation; data appear (quasi-)separated"
            )
        raw_score = design_raw.T @ (w * (r - prob))
        if np.max(np.abs(raw_score)) < score_tol:
            converged = True
            iterations -= 1
            break
        grad = design.T @ (w * (r - prob))
        info_w = w * prob * (1.0 - prob)
        info = design.T @ (design * info_w[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            _check_rank(z, names, "fit_logistic")
            raise SingularDesignError("fit_logistic: Fisher information is singular")
        # step-halving keeps the likelihood non-decreasing
        scale_step = 1.0
        for _ in range(40):
            candidate = beta + scale_step * step
            eta_new = design @ candidate
            ll_new = _log_likelihood(r, eta_new, w)
            if ll_new >= loglik - 1e-12:
                break
            scale_step *= 0.5
        beta = beta + scale_step * step
        eta = design @ beta
        loglik = _log_likelihood(r, eta, w)
        raw_coef = _unstandardize_coef(beta, center, scale)
        if float(np.linalg.norm(raw_coef)) > coef_cap:
            raise SeparationError(
                "fit_logistic: coefficient norm exceeded "
                f"{coef_cap:g} after {iterations} iterations; data appear (quasi-)separated"
            )
    else:
        prob = expit(eta)
        raw_score = design_raw.T @ (w * (r - prob))
        converged = bool(np.max(np.abs(raw_score)) < score_tol)

    return LogisticModel(
        coefficients=_unstandardize_coef(beta, center, scale),
        covariate_names=names,
        converged=converged,
        iterations=iterations,
    )


def fit_nuisances(
    frame: ComparisonFrame,
    ps_mode: str = TIME_INVARIANT,
    mu_covariates: Sequence[str] | None = None,
    pi_covariates: Sequence[str] | None = None,
    unit_weights: np.ndarray | None = None,
) -> NuisanceSet:
    """Fit all outcome-trend and propensity models for one frame.

    ``mu[m]`` is fit on control units only with response delta_y[:, m];
    the propensity is fit on every frame unit with response ``r``.  In
    ``time_invariant`` mode a single model is fit on the baseline (m = 1)
    covariate slice; in ``per_m`` mode one model per observation time uses
    that time's slice.  Covariate subsets default to all covariates.
    Errors from the underlying solvers are re-raised with the model
    identity and observation time attached.
    """
    if ps_mode not in (TIME_INVARIANT, PER_M):
        raise ValueError(f"ps_mode must be '{TIME_INVARIANT}' or '{PER_M}', got {ps_mode!r}")
    mu_names = tuple(mu_covariates) if mu_covariates is not None else frame.covariate_names
    pi_names = tuple(pi_covariates) if pi_covariates is not None else frame.covariate_names
    frame.covariate_indices(mu_names)
    frame.covariate_indices(pi_names)

    controls = frame.r == 0
    w_all = None if unit_weights is None else np.asarray(unit_weights, dtype=float)
    w_controls = None if w_all is None else w_all[controls]

    mu_models = []
    for m in range(frame.n_m):
        try:
            mu_models.append(
                fit_ols(
                    frame.design(m, mu_names)[controls],
                    frame.delta_y[controls, m],
                    weights=w_controls,
                    covariate_names=mu_names,
                )
            )
        except Exception as err:
            raise _annotate(err, f"outcome-trend model at m={m + 1}") from err

    if ps_mode == TIME_INVARIANT:
        try:
            pi_model: LogisticModel | tuple[LogisticModel, ...] = fit_logistic(
                frame.design_base(pi_names), frame.r, weights=w_all, covariate_names=pi_names
            )
        except Exception as err:
            raise _annotate(err, "propensity model (time-invariant)") from err
    else:
        models = []
        for m in range(frame.n_m):
            try:
                models.append(
                    fit_logistic(frame.design(m, pi_names), frame.r, weights=w_all, covariate_names=pi_names)
                )
            except Exception as err:
                raise _annotate(err, f"propensity model at m={m + 1}") from err
        pi_model = tuple(models)

    return NuisanceSet(
        mu=tuple(mu_models),
        pi=pi_model,
        mu_covariates=mu_names,
        pi_covariates=pi_names,
        ps_mode=ps_mode,
    )


def _annotate(err: Exception, context: str) -> Exception:
    if isinstance(err, SingularDesignError):
        return SingularDesignError(f"{context}: {err}", columns=err.columns)
    return type(err)(f"{context}: {err}")
