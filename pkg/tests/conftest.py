import numpy as np
import pytest

from bypassdid.nuisance import LinearModel, LogisticModel, NuisanceSet
from bypassdid.panel import ComparisonFrame, PanelDataset


def build_frame(r, delta_y, x=None, pre_y=None, post_y=None, estimand="att", covariate_names=None, strata=None):
    """Hand-build a ComparisonFrame from raw arrays.

    ``delta_y`` may be (n,) for one observation time or (n, n_m).  When
    pre/post outcomes are not supplied, the pre period is zero so the post
    period equals the outcome change.
    """
    r = np.asarray(r, dtype=float)
    delta_y = np.asarray(delta_y, dtype=float)
    if delta_y.ndim == 1:
        delta_y = delta_y[:, None]
    n, n_m = delta_y.shape
    if pre_y is None:
        pre_y = np.zeros((n, n_m))
    else:
        pre_y = np.asarray(pre_y, dtype=float)
        if pre_y.ndim == 1:
            pre_y = pre_y[:, None]
    if post_y is None:
        post_y = pre_y + delta_y
    else:
        post_y = np.asarray(post_y, dtype=float)
        if post_y.ndim == 1:
            post_y = post_y[:, None]
    if x is None:
        x = np.empty((n, n_m, 0))
        names = ()
    else:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = np.repeat(x[:, None, None], n_m, axis=1)
        elif x.ndim == 2:
            x = np.repeat(x[:, None, :], n_m, axis=1)
        names = covariate_names or tuple(f"x{j + 1}" for j in range(x.shape[2]))
    exposed_label = "treated" if estimand == "att" else "neighbor"
    default_strata = tuple(exposed_label if v == 1 else "control" for v in r)
    return ComparisonFrame(
        estimand=estimand,
        unit_ids=tuple(f"u{i}" for i in range(n)),
        strata=strata or default_strata,
        r=r,
        delta_y=delta_y,
        pre_y=pre_y,
        post_y=post_y,
        x=x,
        x_base=x[:, 0, :],
        covariate_names=names,
    )


def const_mu_nuisances(frame, mu_value=0.0, pi_prob=None):
    """NuisanceSet with constant outcome-trend prediction and optionally a
    constant propensity (default: the frame's exposed share)."""
    if pi_prob is None:
        pi_prob = float(np.mean(frame.r))
    mu = tuple(LinearModel(coefficients=np.array([mu_value]), covariate_names=()) for _ in range(frame.n_m))
    pi = LogisticModel(
        coefficients=np.array([np.log(pi_prob / (1 - pi_prob))]),
        covariate_names=(),
        converged=True,
        iterations=0,
    )
    return NuisanceSet(mu=mu, pi=pi, mu_covariates=(), pi_covariates=(), ps_mode="time_invariant")


def pscore_frame(r, delta_y, probs, **kwargs):
    """Frame with a 'ps_logit' covariate so an injected logistic model with
    coefficients (0, 1) reproduces exactly the given propensities."""
    probs = np.asarray(probs, dtype=float)
    logits = np.log(probs / (1 - probs))
    frame = build_frame(r, delta_y, x=logits, covariate_names=("ps_logit",), **kwargs)
    return frame


def injected_pi_nuisances(frame, mu_value=0.0):
    """NuisanceSet reading the propensity off the frame's 'ps_logit' column."""
    mu = tuple(LinearModel(coefficients=np.array([mu_value]), covariate_names=()) for _ in range(frame.n_m))
    pi = LogisticModel(
        coefficients=np.array([0.0, 1.0]),
        covariate_names=("ps_logit",),
        converged=True,
        iterations=0,
    )
    return NuisanceSet(mu=mu, pi=pi, mu_covariates=(), pi_covariates=("ps_logit",), ps_mode="time_invariant")


def random_dataset(rng, n=30, n_m=3, p=2, neighbors=True, effect=0.0):
    """Small random panel dataset with all three exposure statuses."""
    n_treated = max(2, n // 4)
    n_neighbor = max(2, n // 5) if neighbors else 0
    labels = ["treated"] * n_treated + ["neighbor"] * n_neighbor + ["control"] * (n - n_treated - n_neighbor)
    codes = np.zeros((n, 2), dtype=np.int8)
    for i, lab in enumerate(labels):
        if lab == "treated":
            codes[i, 0] = 1
        elif lab == "neighbor":
            codes[i, 1] = 1
    x = np.repeat(rng.normal(size=(n, 1, p)), n_m, axis=1)
    y = rng.normal(size=(n, 2, n_m))
    y[:, 1, :] += x[:, :, 0] * 0.5
    for i, lab in enumerate(labels):
        if lab != "control":
            y[i, 1, :] += effect
    return PanelDataset(
        unit_ids=tuple(f"u{i:03d}" for i in range(n)),
        strata=tuple(labels),
        exposure_codes=codes,
        y=y,
        x=x,
        covariate_names=tuple(f"x{j + 1}" for j in range(p)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
