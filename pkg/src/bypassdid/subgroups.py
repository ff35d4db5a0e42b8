"""Geographic-proximity subgroups: proxy construction, a small k-means,
and subgroup effect estimation.

Proxy measures spread each taxed zone's population and year-to-year sales
difference equally over its adjacent neighbor zones and sum the shares
arriving at each neighbor zone, yielding per-zone "available traffic" and
"available sales" proxies.  Zones are then clustered (k-means on the
standardized proxies) into low and high availability groups, and effects
are re-estimated on each subgroup of exposed units while keeping the full
control group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .analysis import AnalysisSpec, build_frame, fit_frame_nuisances, run_estimate
from .errors import DegenerateAdjacencyError, GroupEmptyError, InfeasibleClusterError, SchemaError
from .estimators import RELATIVE, EffectEstimate, estimate_effects, estimate_relative
from .inference import BootstrapResult, BootstrapSpec, bootstrap_ci
from .panel import PanelDataset, make_comparison

SMALL_SUBGROUP = 15


@dataclass(frozen=True)
class ProxyMeasures:
    """Per-zone (available_traffic, available_sales) pairs."""

    zones: tuple[str, ...]
    values: np.ndarray  # (n_zones, 2)

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {z: (float(v[0]), float(v[1])) for z, v in zip(self.zones, self.values)}


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # cluster index per point
    centers: np.ndarray  # (k, d)
    inertia: float
    inertia_history: tuple[float, ...] = ()


def compute_proxies(
    zone_measures: Mapping[str, tuple[float, float]],
    adjacency: Iterable[tuple[str, str]],
    neighbor_zones: Sequence[str] | None = None,
) -> ProxyMeasures:
    """Distribute taxed-zone measures over adjacent neighbor zones.

    ``zone_measures`` maps each taxed zone to (population, year-to-year
    sales difference); ``adjacency`` lists (taxed_zone, neighbor_zone)
    edges.  Each taxed zone's measures are divided by its number of
    neighbors, and each neighbor zone receives the sum of the shares from
    all taxed zones adjacent to it.  A taxed zone with measures but no
    listed neighbors is an error; a neighbor zone adjacent to nothing
    keeps (0, 0).  ``neighbor_zones`` lists the zones to report (default:
    every zone appearing as a neighbor in the edge list).
    """
    edges = list(adjacency)
    out_degree: dict[str, int] = {}
    neighbors: list[str] = list(neighbor_zones) if neighbor_zones is not None else []
    seen = set(neighbors)
    for taxed, neigh in edges:
        out_degree[taxed] = out_degree.get(taxed, 0) + 1
        if neighbor_zones is None and neigh not in seen:
            seen.add(neigh)
            neighbors.append(neigh)
    for taxed in zone_measures:
        if out_degree.get(taxed, 0) == 0:
            raise DegenerateAdjacencyError(f"taxed zone {taxed!r} has no adjacent neighbor zones")
    totals = {z: np.zeros(2) for z in neighbors}
    for taxed, neigh in edges:
        if taxed not in zone_measures:
            raise SchemaError(f"adjacency references taxed zone {taxed!r} with no measures")
        share = np.asarray(zone_measures[taxed], dtype=float) / out_degree[taxed]
        if neigh in totals:
            totals[neigh] += share
    values = np.array([totals[z] for z in neighbors]) if neighbors else np.empty((0, 2))
    return ProxyMeasures(zones=tuple(neighbors), values=values)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> ClusterAssignment:
    history: list[float] = []
    for _ in range(max_iter):
        dist = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        labels = np.argmin(dist, axis=1)
        history.append(float(np.sum(np.min(dist, axis=1) ** 2)))
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            members = points[labels == j]
            if members.shape[0] == 0:
                # reseed an empty cluster at the point farthest from its center
                far = int(np.argmax(np.min(dist, axis=1)))
                new_centers[j] = points[far]
            else:
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers, rtol=0.0, atol=0.0):
            break
        centers = new_centers
    dist = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    labels = np.argmin(dist, axis=1)
    inertia = float(np.sum(np.min(dist, axis=1) ** 2))
    history.append(inertia)
    return ClusterAssignment(labels=labels, centers=centers, inertia=inertia, inertia_history=tuple(history))


def kmeans(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> ClusterAssignment:
    """Lloyd's algorithm, best of ``restarts`` seeded initializations.

    Initial centers are k distinct points drawn without replacement; an
    empty cluster mid-iteration is reseeded to the farthest point.
    Deterministic given the seed.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.ndim == 2 and points.shape[0] == 1 and points.shape[1] > 1 and k > 1:
        points = points.T
    n = points.shape[0]
    if k < 1 or k > n:
        raise InfeasibleClusterError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    best: ClusterAssignment | None = None
    for _ in range(max(1, restarts)):
        init = points[rng.choice(n, size=k, replace=False)]
        result = _lloyd(points, init)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def estimate_subgroup(
    dataset: PanelDataset,
    unit_filter: np.ndarray | Callable[[str], bool] | Sequence[bool],
    analysis: AnalysisSpec,
    ci_spec: BootstrapSpec | None = None,
    refit_nuisances: bool = True,
    n_jobs: int | None = None,
) -> tuple[EffectEstimate, BootstrapResult | None, tuple[str, ...]]:
    """Effect on a subgroup of exposed units, keeping all control units.

    ``unit_filter`` marks the exposed units to keep (boolean per dataset
    unit, or a predicate on unit ids); control units always stay.  By
    default nuisances are refit within the filtered frame; with
    ``refit_nuisances=False`` the full-population fits are reused, which
    makes disjoint subgroup estimates decompose exactly into the
    population estimate.  Returns the estimate, the bootstrap result when
    requested, and any warnings (small subgroups produce wide intervals).
    """
    if callable(unit_filter):
        keep_exposed = np.array([bool(unit_filter(uid)) for uid in dataset.unit_ids])
    else:
        keep_exposed = np.asarray([bool(v) for v in unit_filter])
        if keep_exposed.shape[0] != dataset.n_units:
            raise SchemaError("unit_filter length does not match dataset")
    labels = dataset.exposure_labels
    is_control = labels == "control"
    keep = is_control | keep_exposed
    sub = dataset.subset(keep)

    exposed_label = "treated" if analysis.estimand == "att" else "neighbor"
    n_exposed = int((sub.exposure_labels == exposed_label).sum())
    if n_exposed < 2:
        raise GroupEmptyError(f"subgroup leaves {n_exposed} exposed unit(s); need at least 2")
    warnings: tuple[str, ...] = ()
    if n_exposed < SMALL_SUBGROUP:
        warnings = (
            f"subgroup has only {n_exposed} exposed units; interval estimates may be very wide",
        )

    if refit_nuisances:
        point = run_estimate(sub, analysis)
        boot = bootstrap_ci(sub, analysis, ci_spec, n_jobs=n_jobs) if ci_spec is not None else None
        return point, boot, warnings

    # reuse nuisances fit on the full population
    full_frame = build_frame(dataset, analysis)
    nuisances = fit_frame_nuisances(full_frame, analysis)
    frame = make_comparison(sub, analysis.estimand)
    if analysis.scale == RELATIVE:
        point = estimate_relative(frame, nuisances, analysis.windows)
    else:
        point = estimate_effects(
            frame, nuisances, analysis.method, analysis.windows, twfe_covariates=analysis.mu_covariates
        )
    if ci_spec is not None:
        raise SchemaError("bootstrap intervals require refit_nuisances=True")
    return point, None, warnings
