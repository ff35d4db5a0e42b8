"""Doubly robust difference-in-differences estimation under interference.

Estimates the effect of a regional policy both on the implementing region
(ATT) and on adjacent untaxed regions reached by cross-border "bypass"
behavior (ATN), from longitudinal panel data with a binary exposure
mapping.  Includes TWFE, outcome-regression, IPW, and doubly robust
estimators, stratified and Bayesian bootstrap intervals, an
influence-function variance, pre-trends diagnostics, subgroup analysis,
and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from .analysis import AnalysisSpec, run_estimate, run_pretrend
from .errors import (
    ConsistencyError,
    DegenerateAdjacencyError,
    DegenerateComparisonError,
    DegenerateResponseError,
    DidError,
    EstimationError,
    GroupEmptyError,
    IncompletePanelError,
    InfeasibleClusterError,
    InferenceUnstableError,
    InputError,
    NonoverlapError,
    SchemaError,
    SeparationError,
    SingularDesignError,
    UnderdeterminedError,
    UnstableRatioError,
    WindowBoundsError,
)
from .estimators import (
    EffectEstimate,
    WeightVector,
    compute_weights,
    estimate_dr,
    estimate_effects,
    estimate_ipw,
    estimate_or,
    estimate_pretrends,
    estimate_relative,
    estimate_twfe,
    resolve_windows,
)
from .inference import (
    BootstrapResult,
    BootstrapSpec,
    IntervalEstimate,
    bayesian_weights,
    bootstrap_ci,
    bootstrap_pretrend_ci,
    parametric_cis,
    parametric_variance,
    stratified_resample,
)
from .nuisance import (
    LinearModel,
    LogisticModel,
    NuisanceSet,
    fit_logistic,
    fit_nuisances,
    fit_ols,
)
from .panel import (
    ComparisonFrame,
    ExposureStatus,
    PanelDataset,
    PanelSchema,
    UnitRecord,
    apply_exclusion,
    emit_panel,
    load_panel,
    make_comparison,
)
from .simulation import (
    MetricsRow,
    SimulatedTruth,
    SimulationScenario,
    builtin_scenario_ids,
    gen_covariates,
    gen_exposures,
    gen_outcomes,
    load_scenario,
    run_grid,
    simulate_dataset,
    twfe_heterogeneity_demo,
)
from .subgroups import (
    ClusterAssignment,
    ProxyMeasures,
    compute_proxies,
    estimate_subgroup,
    kmeans,
)

__all__ = [name for name in dir() if not name.startswith("_")]
