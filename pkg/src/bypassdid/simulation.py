"""Synthetic panel generator and Monte Carlo harness.

The data generating process draws four standard-normal base covariates,
lets the fourth follow a drifting random walk over observation times, and
exposes estimators only to a fixed nonlinear transformation of the base
covariates (the classic device for studying misspecification: a model
linear in the transformed covariates cannot recover a relationship that
is linear in the base covariates, and vice versa).  Scenario cells toggle
which covariate set drives exposure assignment and which drives the
outcome trend, so each nuisance model is either correctly specified or
not:

    cell   exposure set   outcome set    correctly specified
    a      observed       observed       both models
    b      original       observed       outcome only
    c      observed       original       propensity only
    d      original       original       neither

Units are split between two disjoint study arms; each arm contains its
own exposed group and control group, mirroring an evaluation where the
directly affected region and the adjacent region are compared against
different control pools.

Outcomes follow a components-of-variance model: intercept, unit effect,
arm-group effect, observation-time and period effects, a period-varying
confounded trend, and the treatment effects switched on in the post
period.  The neighbor-arm effect is attenuated by a distance variable so
the effect is heterogeneous across units.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from ._parallel import parallel_map
from .analysis import AnalysisSpec
from .errors import EstimationError, InferenceUnstableError, SchemaError
from .estimators import METHODS, estimate_dr, estimate_ipw, estimate_or, estimate_twfe
from .inference import BootstrapSpec, stratified_resample
from .nuisance import fit_nuisances
from .panel import PanelDataset, make_comparison

# Loadings applied to the standardized observed covariates when they drive
# the outcome trend.  Calibrated once against the published simulation
# grid so the relative size of confounding across scenario cells matches.
OBS_TREND_LOADINGS = np.array([1.55, 1.60, 0.65, 1.40])

# When the original covariates drive the outcome trend, the trend index is
# the residual of their sum after projecting onto the observed covariates:
# confounding that the observed covariates cannot absorb linearly.  The
# scale is calibrated alongside OBS_TREND_LOADINGS.
LATENT_TREND_SCALE = 0.85

# The neighbor effect per unit is tau_atn * DISTANCE_EFFECT_FACTOR * (1-D).
# D is centered near 1/2, so the factor 2 keeps the population-level
# neighbor effect at the configured tau_atn.
DISTANCE_EFFECT_FACTOR = 2.0

BASE_OUTCOME = 20.0
NOISE_VARIANCE = 0.5
DISTANCE_VARIANCE = 0.05
WALK_DRIFT = 0.25
WALK_VARIANCE = 0.25

ARM_ATT = 0
ARM_ATN = 1
STRATUM_LABELS = {
    (ARM_ATT, False): "att_control",
    (ARM_ATT, True): "att_treated",
    (ARM_ATN, False): "atn_control",
    (ARM_ATN, True): "atn_neighbor",
}

OBSERVED = "observed"
ORIGINAL = "original"

COVARIATE_NAMES = ("x1", "x2", "x3", "x4")


@dataclass(frozen=True)
class SimulationScenario:
    """One cell of the simulation grid.

    ``lambda_1m`` (the post-period trend coefficients) is always twice
    ``lambda_0m``.  ``alpha_group`` maps the four arm-exposure strata to
    their fixed level offsets.  ``tau_atn_m`` is the population-level
    neighbor effect per observation time; the per-unit effect is scaled by
    distance (see DISTANCE_EFFECT_FACTOR).
    """

    scenario_id: str
    n: int
    n_m: int
    exposure_covariates: str
    outcome_covariates: str
    beta_treated: tuple[float, ...]
    beta_neighbor: tuple[float, ...]
    gamma_m: tuple[float, ...]
    gamma_t: float
    lambda_0m: tuple[float, ...]
    tau_att_m: tuple[float, ...]
    tau_atn_m: tuple[float, ...]
    alpha_group: dict[str, float]
    att_arm_share: float = 0.43

    def __post_init__(self):
        for name in ("gamma_m", "lambda_0m", "tau_att_m", "tau_atn_m"):
            if len(getattr(self, name)) != self.n_m:
                raise SchemaError(f"scenario {self.scenario_id}: {name} must have n_m={self.n_m} entries")
        if len(self.beta_treated) != 5 or len(self.beta_neighbor) != 5:
            raise SchemaError("exposure coefficient vectors have 5 entries: intercept plus four covariates")
        for set_name in (self.exposure_covariates, self.outcome_covariates):
            if set_name not in (OBSERVED, ORIGINAL):
                raise SchemaError(f"covariate set must be '{OBSERVED}' or '{ORIGINAL}', got {set_name!r}")
        missing = set(STRATUM_LABELS.values()) - set(self.alpha_group)
        if missing:
            raise SchemaError(f"alpha_group missing entries for {sorted(missing)}")

    @property
    def lambda_1m(self) -> tuple[float, ...]:
        return tuple(2.0 * v for v in self.lambda_0m)

    @property
    def att_true(self) -> float:
        return float(np.mean(self.tau_att_m))


@dataclass(frozen=True)
class SimulatedTruth:
    """True effects for one generated dataset.

    ``att_true`` comes straight from the scenario parameters.  The
    neighbor effect depends on the realized distances, so ``atn_true``
    is sample specific: per observation time it averages the attenuated
    per-unit effects over exposed neighbor units, then averages over
    observation times.  ``distance`` holds the per-unit draw (NaN outside
    the exposed neighbor group).
    """

    att_true: float
    atn_true: float
    atn_per_m: tuple[float, ...]
    distance: np.ndarray

    def truth_for(self, estimand: str) -> float:
        return self.att_true if estimand == "att" else self.atn_true


@dataclass(frozen=True)
class SimulatedCovariates:
    original: np.ndarray  # (n, n_m, 4)
    observed: np.ndarray  # (n, n_m, 4)


@dataclass(frozen=True)
class SimulatedExposures:
    arm: np.ndarray  # (n,) 0=att arm, 1=atn arm
    exposed: np.ndarray  # (n,) bool
    distance: np.ndarray  # (n,) float, NaN outside exposed neighbors


def observed_transform(base: np.ndarray, walk: np.ndarray) -> np.ndarray:
    """Nonlinear transform from base covariates to the observed set.

    ``base`` is (n, 4); ``walk`` is the (n, n_m) trajectory of the fourth
    covariate.  Returns (n, n_m, 4); the first three observed covariates
    are constant over observation times.
    """
    n, n_m = walk.shape
    obs1 = (0.6 + base[:, 0] * base[:, 2] / 25.0) ** 3
    obs2 = 10.0 + base[:, 1] / (1.0 + np.exp(base[:, 2]))
    obs3 = np.exp(0.5 * base[:, 2])
    obs4 = (20.0 + base[:, 1][:, None] * walk) ** 2  # (n, n_m)
    observed = np.empty((n, n_m, 4))
    for m in range(n_m):
        observed[:, m, 0] = obs1
        observed[:, m, 1] = obs2
        observed[:, m, 2] = obs3
        observed[:, m, 3] = obs4[:, m]
    return observed


def gen_covariates(n: int, n_m: int, rng: np.random.Generator) -> SimulatedCovariates:
    """Draw base covariates and their observed (transformed) counterparts.

    Base: four independent standard normals per unit; the fourth follows a
    random walk over observation times with drift 0.25 and innovation
    variance 0.25.  Observed: fixed nonlinear transforms of the base set,
    with the fourth transformed per observation time.
    """
    z = rng.normal(size=(n, 4))
    z4 = np.empty((n, n_m))
    z4[:, 0] = z[:, 3]
    for m in range(1, n_m):
        z4[:, m] = rng.normal(z4[:, m - 1] + WALK_DRIFT, np.sqrt(WALK_VARIANCE))
    original = np.empty((n, n_m, 4))
    for m in range(n_m):
        original[:, m, :3] = z[:, :3]
        original[:, m, 3] = z4[:, m]
    return SimulatedCovariates(original=original, observed=observed_transform(z, z4))


def _zscore_slices(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    sd = np.where(sd == 0, 1.0, sd)
    return (x - mean) / sd


def gen_exposures(
    covariates: SimulatedCovariates, scenario: SimulationScenario, rng: np.random.Generator
) -> SimulatedExposures:
    """Split units into the two arms and draw exposure within each arm.

    The first round(att_arm_share * n) units form the directly-treated
    arm.  Exposure probabilities are logistic in the standardized baseline
    slice of the scenario's exposure covariate set.  Exposed neighbor
    units get a distance draw, clamped to [0.1, 0.9].
    """
    n = covariates.observed.shape[0]
    basis_raw = covariates.observed if scenario.exposure_covariates == OBSERVED else covariates.original
    basis = _zscore_slices(basis_raw[:, 0, :])
    beta_t = np.asarray(scenario.beta_treated)
    beta_n = np.asarray(scenario.beta_neighbor)
    p_treated = expit(beta_t[0] + basis @ beta_t[1:])
    p_neighbor = expit(beta_n[0] + basis @ beta_n[1:])

    n_att = round(scenario.att_arm_share * n)
    arm = np.full(n, ARM_ATN, dtype=int)
    arm[:n_att] = ARM_ATT
    u = rng.uniform(size=n)
    exposed = np.where(arm == ARM_ATT, u < p_treated, u < p_neighbor)

    v_obs = _zscore_slices(covariates.observed[:, 0, :])
    center = expit(-(v_obs[:, 1] + v_obs[:, 2] + v_obs[:, 3]))
    d = np.clip(rng.normal(center, np.sqrt(DISTANCE_VARIANCE)), 0.1, 0.9)
    distance = np.where((arm == ARM_ATN) & exposed, d, np.nan)
    return SimulatedExposures(arm=arm, exposed=exposed, distance=distance)


def _trend_index(covariates: SimulatedCovariates, outcome_set: str) -> np.ndarray:
    """Per-(unit, m) confounded trend index for the chosen covariate set."""
    n, n_m, _ = covariates.observed.shape
    index = np.empty((n, n_m))
    for m in range(n_m):
        v_obs = _zscore_slices(covariates.observed[:, m, :])
        if outcome_set == OBSERVED:
            index[:, m] = v_obs @ OBS_TREND_LOADINGS
        else:
            total = _zscore_slices(covariates.original[:, m, :]).sum(axis=1)
            design = np.column_stack([np.ones(n), v_obs])
            coef, *_ = np.linalg.lstsq(design, total, rcond=None)
            index[:, m] = LATENT_TREND_SCALE * (total - design @ coef)
    return index


def gen_outcomes(
    scenario: SimulationScenario,
    covariates: SimulatedCovariates,
    exposures: SimulatedExposures,
    rng: np.random.Generator,
    null_effects: bool = False,
) -> tuple[PanelDataset, SimulatedTruth]:
    """Assemble outcomes and package everything as a panel dataset.

    The panel exposes only the raw observed covariates (x1..x4, with x4
    m-varying) and labels units by arm-exposure stratum.  With
    ``null_effects`` the treatment-effect terms are zeroed, producing a
    no-anticipation placebo world with the same confounding structure.
    """
    n, n_m, _ = covariates.observed.shape
    arm, exposed, distance = exposures.arm, exposures.exposed, exposures.distance
    gamma_m = np.asarray(scenario.gamma_m)
    lam0 = np.asarray(scenario.lambda_0m)
    lam1 = np.asarray(scenario.lambda_1m)
    tau_att = np.asarray(scenario.tau_att_m)
    tau_atn = np.asarray(scenario.tau_atn_m)

    strata = [STRATUM_LABELS[(int(a), bool(e))] for a, e in zip(arm, exposed)]
    alpha_group = np.array([scenario.alpha_group[s] for s in strata])
    alpha_unit = rng.normal(size=n)
    noise = rng.normal(0.0, np.sqrt(NOISE_VARIANCE), size=(n, 2, n_m))

    trend = _trend_index(covariates, scenario.outcome_covariates)
    is_treated = (arm == ARM_ATT) & exposed
    is_neighbor = (arm == ARM_ATN) & exposed
    attenuation = np.where(is_neighbor, 1.0 - distance, 0.0)
    attenuation = np.nan_to_num(attenuation)

    y = np.empty((n, 2, n_m))
    for t in (0, 1):
        lam = lam1 if t == 1 else lam0
        for m in range(n_m):
            effect = tau_att[m] * is_treated + DISTANCE_EFFECT_FACTOR * tau_atn[m] * attenuation
            if null_effects:
                effect = np.zeros(n)
            y[:, t, m] = (
                BASE_OUTCOME
                + alpha_unit
                + alpha_group
                + gamma_m[m]
                + scenario.gamma_t * t
                + lam[m] * trend[:, m]
                + t * effect
                + noise[:, t, m]
            )

    atn_per_m = tuple(
        float(np.mean(DISTANCE_EFFECT_FACTOR * tau_atn[m] * (1.0 - distance[is_neighbor])))
        if is_neighbor.any()
        else float("nan")
        for m in range(n_m)
    )
    truth = SimulatedTruth(
        att_true=scenario.att_true,
        atn_true=float(np.mean(atn_per_m)),
        atn_per_m=atn_per_m,
        distance=distance,
    )

    exposure_codes = np.zeros((n, 2), dtype=np.int8)
    exposure_codes[is_treated, 0] = 1
    exposure_codes[is_neighbor, 1] = 1
    width = len(str(n))
    dataset = PanelDataset(
        unit_ids=tuple(f"u{i:0{width}d}" for i in range(1, n + 1)),
        strata=tuple(strata),
        exposure_codes=exposure_codes,
        y=y,
        x=covariates.observed,
        covariate_names=COVARIATE_NAMES,
        m_varying="x4",
    )
    return dataset, truth


def simulate_dataset(
    scenario: SimulationScenario, seed: int | np.random.SeedSequence | np.random.Generator, null_effects: bool = False
) -> tuple[PanelDataset, SimulatedTruth]:
    """Generate one complete replicate dataset for a scenario."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cov = gen_covariates(scenario.n, scenario.n_m, rng)
    exp = gen_exposures(cov, scenario, rng)
    return gen_outcomes(scenario, cov, exp, rng, null_effects=null_effects)


def arm_dataset(dataset: PanelDataset, estimand: str) -> PanelDataset:
    """Restrict a simulated dataset to one arm's exposed and control units."""
    prefix = "att_" if estimand == "att" else "atn_"
    mask = np.array([s.startswith(prefix) for s in dataset.strata])
    return dataset.subset(mask)


# ----------------------------------------------------------------------
# scenario presets
# ----------------------------------------------------------------------

_GRID_SIZES = {"1": (250, 13), "2": (2000, 2), "3": (500, 4)}
_GRID_GAMMA_M = {
    "1": (0.5, 0.7, 0.8, 1.0, 1.1, 1.2, 1.4, 1.5, 1.6, 1.4, 1.1, 0.9, 0.8),
    "2": (0.5, 1.0),
    "3": (0.5, 1.0, 1.5, 1.0),
}
_GRID_LAMBDA_0M = {
    "1": (0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.15, 1.0, 0.95, 0.9),
    "2": (0.95, 1.05),
    "3": (0.85, 1.0, 1.1, 0.95),
}
_CELL_SETS = {
    "a": (OBSERVED, OBSERVED),
    "b": (ORIGINAL, OBSERVED),
    "c": (OBSERVED, ORIGINAL),
    "d": (ORIGINAL, ORIGINAL),
}


def builtin_scenario_ids() -> tuple[str, ...]:
    return tuple(f"{size}{cell}" for size in ("1", "2", "3") for cell in "abcd")


def scenario_to_text(s: SimulationScenario) -> str:
    def fmt(v) -> str:
        if isinstance(v, tuple):
            return ", ".join(repr(float(x)) for x in v)
        return repr(float(v)) if isinstance(v, float) else str(v)

    lines = [
        f"scenario = {s.scenario_id}",
        f"n = {s.n}",
        f"n_m = {s.n_m}",
        f"exposure_covariates = {s.exposure_covariates}",
        f"outcome_covariates = {s.outcome_covariates}",
        f"beta_treated = {fmt(s.beta_treated)}",
        f"beta_neighbor = {fmt(s.beta_neighbor)}",
        f"gamma_m = {fmt(s.gamma_m)}",
        f"gamma_t = {fmt(s.gamma_t)}",
        f"lambda_0m = {fmt(s.lambda_0m)}",
        f"tau_att_m = {fmt(s.tau_att_m)}",
        f"tau_atn_m = {fmt(s.tau_atn_m)}",
        f"alpha_att_control = {fmt(s.alpha_group['att_control'])}",
        f"alpha_att_treated = {fmt(s.alpha_group['att_treated'])}",
        f"alpha_atn_control = {fmt(s.alpha_group['atn_control'])}",
        f"alpha_atn_neighbor = {fmt(s.alpha_group['atn_neighbor'])}",
        f"att_arm_share = {fmt(s.att_arm_share)}",
    ]
    return "\n".join(lines) + "\n"


def scenario_from_text(text: str) -> SimulationScenario:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"scenario file line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()

    def vec(key: str) -> tuple[float, ...]:
        return tuple(float(v) for v in kv[key].split(","))

    try:
        return SimulationScenario(
            scenario_id=kv["scenario"],
            n=int(kv["n"]),
            n_m=int(kv["n_m"]),
            exposure_covariates=kv["exposure_covariates"],
            outcome_covariates=kv["outcome_covariates"],
            beta_treated=vec("beta_treated"),
            beta_neighbor=vec("beta_neighbor"),
            gamma_m=vec("gamma_m"),
            gamma_t=float(kv["gamma_t"]),
            lambda_0m=vec("lambda_0m"),
            tau_att_m=vec("tau_att_m"),
            tau_atn_m=vec("tau_atn_m"),
            alpha_group={
                "att_control": float(kv["alpha_att_control"]),
                "att_treated": float(kv["alpha_att_treated"]),
                "atn_control": float(kv["alpha_atn_control"]),
                "atn_neighbor": float(kv["alpha_atn_neighbor"]),
            },
            att_arm_share=float(kv.get("att_arm_share", 0.43)),
        )
    except KeyError as err:
        raise SchemaError(f"scenario file is missing key {err.args[0]!r}")


def load_scenario(name_or_path: str) -> SimulationScenario:
    """Load a scenario preset by id (e.g. ``2a``) or from a file path."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return scenario_from_text(path.read_text(encoding="utf-8"))
    name = str(name_or_path)
    if name not in builtin_scenario_ids():
        raise SchemaError(f"unknown scenario {name!r}; built-ins are {', '.join(builtin_scenario_ids())}")
    text = resources.files("bypassdid").joinpath(f"scenarios/{name}.txt").read_text(encoding="utf-8")
    return scenario_from_text(text)


# ----------------------------------------------------------------------
# grid runner
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    """Bias / spread / coverage summary for one grid cell."""

    scenario: str
    estimand: str
    method: str
    bias_pct: float
    std_err: float
    coverage_pct: float
    n_failed: int


def _annual(values: np.ndarray) -> float:
    return float(np.mean(values))


def _estimate_all_methods(
    dataset: PanelDataset, estimand: str, methods: Sequence[str]
) -> dict[str, float]:
    """Annual estimates for several methods sharing one set of nuisance fits."""
    frame = make_comparison(dataset, estimand)
    nuis = None
    if any(m != "twfe" for m in methods):
        nuis = fit_nuisances(frame)
    out: dict[str, float] = {}
    for method in methods:
        if method == "twfe":
            per = [estimate_twfe(frame, m) for m in range(frame.n_m)]
        elif method == "or":
            per = [estimate_or(frame, nuis, m) for m in range(frame.n_m)]
        elif method == "ipw":
            per = [estimate_ipw(frame, nuis, m) for m in range(frame.n_m)]
        elif method == "dr":
            per = [estimate_dr(frame, nuis, m) for m in range(frame.n_m)]
        else:
            raise ValueError(f"unknown method {method!r}")
        out[method] = _annual(np.asarray(per))
    return out


def _one_replicate(args):
    scenario, seed_seq, methods, ci_methods, ci_estimands, boot = args
    rng = np.random.default_rng(seed_seq)
    dataset, truth = simulate_dataset(scenario, rng)
    result: dict[str, dict] = {}
    for estimand in ("att", "atn"):
        sub = arm_dataset(dataset, estimand)
        try:
            points = _estimate_all_methods(sub, estimand, methods)
        except EstimationError as err:
            result[estimand] = {"error": str(err)}
            continue
        cell: dict[str, object] = {"points": points, "truth": truth.truth_for(estimand)}
        if boot is not None and ci_methods and estimand in ci_estimands:
            draws: dict[str, list[float]] = {m: [] for m in ci_methods}
            n_boot_failed = 0
            for child in seed_seq.spawn(boot.replicates):
                brng = np.random.default_rng(child)
                try:
                    resampled = stratified_resample(sub, brng)
                    ests = _estimate_all_methods(resampled, estimand, ci_methods)
                except EstimationError:
                    n_boot_failed += 1
                    continue
                for m in ci_methods:
                    draws[m].append(ests[m])
            if n_boot_failed > boot.max_failure_rate * boot.replicates:
                result[estimand] = {"error": f"{n_boot_failed} bootstrap replicates failed"}
                continue
            alpha = (1.0 - boot.level) / 2.0
            cis = {}
            for m in ci_methods:
                lo, hi = np.percentile(draws[m], [100 * alpha, 100 * (1 - alpha)])
                cis[m] = (float(lo), float(hi))
            cell["cis"] = cis
        result[estimand] = cell
    return result


def run_grid(
    scenarios: Sequence[SimulationScenario],
    methods: Sequence[str] = METHODS,
    replicates: int = 1000,
    boot: BootstrapSpec | None = None,
    ci_methods: Sequence[str] | None = None,
    ci_estimands: Sequence[str] | None = None,
    seed: int = 0,
    n_jobs: int | None = None,
) -> list[MetricsRow]:
    """Monte Carlo over scenario cells; one metrics row per cell and method.

    Per replicate, nuisances are fit per the standard protocol (one
    outcome-trend regression per observation time on control units, a
    single time-invariant propensity model) and each method's annual
    aggregate is recorded.  With ``boot`` set, stratified-bootstrap
    percentile intervals are computed for ``ci_methods`` (default: all
    requested methods) and coverage is evaluated against each replicate's
    own truth.  Replicates whose estimation fails are excluded with
    counts; more than 10% failures in a cell raises
    :class:`InferenceUnstableError`.
    """
    if replicates < 2:
        raise SchemaError("run_grid needs at least 2 replicates")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise SchemaError(f"unknown method {m!r}; expected subset of {METHODS}")
    ci = tuple(ci_methods) if ci_methods is not None else (methods if boot is not None else ())
    ci_est = tuple(ci_estimands) if ci_estimands is not None else ("att", "atn")
    rows: list[MetricsRow] = []
    master = np.random.SeedSequence(seed)
    scenario_seeds = master.spawn(len(scenarios))
    for scenario, sseed in zip(scenarios, scenario_seeds):
        rep_seeds = sseed.spawn(replicates)
        work = [(scenario, rs, methods, ci, ci_est, boot) for rs in rep_seeds]
        results = parallel_map(_one_replicate, work, n_jobs=n_jobs)
        for estimand in ("att", "atn"):
            cells = [r[estimand] for r in results]
            failures = [c for c in cells if "error" in c]
            kept = [c for c in cells if "error" not in c]
            if len(failures) > 0.10 * replicates:
                example = failures[0]["error"]
                raise InferenceUnstableError(
                    f"scenario {scenario.scenario_id} {estimand}: {len(failures)} of {replicates} "
                    f"replicates failed; example: {example}"
                )
            truths = np.array([c["truth"] for c in kept])
            truth_ref = float(np.mean(truths))
            for method in methods:
                ests = np.array([c["points"][method] for c in kept])
                bias_pct = 100.0 * float(np.mean(ests - truths)) / abs(truth_ref)
                std_err = float(np.std(ests, ddof=1))
                coverage = float("nan")
                if boot is not None and method in ci and estimand in ci_est:
                    hits = [
                        c["cis"][method][0] <= c["truth"] <= c["cis"][method][1] for c in kept
                    ]
                    coverage = 100.0 * float(np.mean(hits))
                rows.append(
                    MetricsRow(
                        scenario=scenario.scenario_id,
                        estimand=estimand,
                        method=method,
                        bias_pct=bias_pct,
                        std_err=std_err,
                        coverage_pct=coverage,
                        n_failed=len(failures),
                    )
                )
    return rows


def metrics_to_csv(rows: Iterable[MetricsRow], header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write("scenario,estimand,method,bias_pct,std_err,coverage_pct,n_failed\n")
    for r in rows:
        cov = "" if np.isnan(r.coverage_pct) else f"{r.coverage_pct:.1f}"
        buf.write(f"{r.scenario},{r.estimand},{r.method},{r.bias_pct:.3f},{r.std_err:.4f},{cov},{r.n_failed}\n")
    return buf.getvalue()


# ----------------------------------------------------------------------
# covariate-interacted TWFE bias demonstration
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class DemoResult:
    heterogeneous: bool
    truth: float
    mean_estimate: float
    bias_pct: float
    replicates: int


def twfe_heterogeneity_demo(
    n: int = 10_000,
    replicates: int = 1000,
    heterogeneous: bool = False,
    seed: int = 0,
    truth_draws: int = 2_000_000,
) -> DemoResult:
    """Bias of the covariate-interacted two-group regression under effect
    heterogeneity.

    Data: X ~ N(0,1); treatment A ~ Bernoulli(1 / (1 + exp(-0.5 + 0.5 X)));
    outcomes Y_t ~ N(10 + t + 2A + 2X + tX + 4 t theta A, 0.1) with theta = 1,
    or theta = 1 + 1{X >= 0.5} in the heterogeneous setting.  The fitted
    model regresses the stacked outcomes on (1, X, t, A, tX, tA) and reads
    the tA coefficient.  The true effect on the treated is 4 E[theta | A=1]:
    4 when homogeneous, 4 (1 + P(X >= 0.5 | A = 1)) when heterogeneous, with
    the conditional probability evaluated by Monte Carlo.
    """
    if n < 100:
        raise SchemaError("demo needs n >= 100")
    master = np.random.SeedSequence(seed)
    truth_seed, *rep_seeds = master.spawn(replicates + 1)

    if heterogeneous:
        t_rng = np.random.default_rng(truth_seed)
        x = t_rng.normal(size=truth_draws)
        a = t_rng.uniform(size=truth_draws) < 1.0 / (1.0 + np.exp(-0.5 + 0.5 * x))
        p_cond = float(np.mean(x[a] >= 0.5))
        truth = 4.0 * (1.0 + p_cond)
    else:
        truth = 4.0

    def one(seed_seq) -> float:
        rng = np.random.default_rng(seed_seq)
        x = rng.normal(size=n)
        a = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-0.5 + 0.5 * x))).astype(float)
        theta = 1.0 + (x >= 0.5) if heterogeneous else np.ones(n)
        y0 = rng.normal(10.0 + 2.0 * a + 2.0 * x, np.sqrt(0.1))
        y1 = rng.normal(10.0 + 1.0 + 2.0 * a + 2.0 * x + x + 4.0 * theta * a, np.sqrt(0.1))
        ones = np.ones(n)
        zeros = np.zeros(n)
        design = np.column_stack(
            [
                np.concatenate([x, x]),
                np.concatenate([zeros, ones]),
                np.concatenate([a, a]),
                np.concatenate([zeros, x]),
                np.concatenate([zeros, a]),
            ]
        )
        y = np.concatenate([y0, y1])
        coef, *_ = np.linalg.lstsq(np.column_stack([np.ones(2 * n), design]), y, rcond=None)
        return float(coef[-1])

    estimates = parallel_map(one, rep_seeds)
    mean_est = float(np.mean(estimates))
    return DemoResult(
        heterogeneous=heterogeneous,
        truth=truth,
        mean_estimate=mean_est,
        bias_pct=100.0 * (mean_est - truth) / abs(truth),
        replicates=replicates,
    )
