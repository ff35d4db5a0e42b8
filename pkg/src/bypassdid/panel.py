"""Panel data model: ingestion, validation, exclusion, and comparison frames.

A panel holds units observed at ``n_m`` observation times in each of two
treatment periods (``t = 0`` pre, ``t = 1`` post).  Each unit carries one
of three exposure statuses: ``treated`` (1, 0), ``neighbor`` (0, 1), or
``control`` (0, 0).  Covariates are constant over time except for at most
one column declared m-varying.

Datasets are immutable after construction; every operation returns a new
object and is safe to call from concurrent readers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .errors import (
    ConsistencyError,
    GroupEmptyError,
    IncompletePanelError,
    SchemaError,
)

EXPOSURE_LABELS: dict[str, tuple[int, int]] = {
    "treated": (1, 0),
    "neighbor": (0, 1),
    "control": (0, 0),
}
_LABEL_BY_CODE = {code: label for label, code in EXPOSURE_LABELS.items()}

ATT = "att"
ATN = "atn"
_EXPOSED_LABEL = {ATT: "treated", ATN: "neighbor"}


@dataclass(frozen=True)
class ExposureStatus:
    """Pair (own treatment, adjacency exposure) describing a unit's exposure."""

    own_treatment: int
    adjacency_exposure: int

    def __post_init__(self):
        pair = (self.own_treatment, self.adjacency_exposure)
        if pair not in _LABEL_BY_CODE:
            raise SchemaError(
                f"exposure status {pair} is not one of (0,0), (1,0), (0,1); "
                "units both treated and adjacent to an untaxed region are not supported"
            )

    @property
    def label(self) -> str:
        return _LABEL_BY_CODE[(self.own_treatment, self.adjacency_exposure)]

    @classmethod
    def from_label(cls, label: str) -> "ExposureStatus":
        try:
            own, adj = EXPOSURE_LABELS[label]
        except KeyError:
            known = ", ".join(sorted(EXPOSURE_LABELS))
            raise SchemaError(f"unknown exposure label {label!r}; expected one of {known}")
        return cls(own, adj)


@dataclass(frozen=True)
class UnitRecord:
    """One unit's identifiers, exposure, covariates, and outcome matrix.

    ``covariates`` has shape (n_m, p): columns are constant across rows
    except the m-varying one.  ``outcomes`` has shape (2, n_m) indexed by
    (treatment period, observation time).
    """

    unit_id: str
    stratum: str
    exposure: ExposureStatus
    covariates: np.ndarray
    outcomes: np.ndarray


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Complete long-format panel in columnar form.

    Arrays are aligned on the unit axis: ``y`` is (n, 2, n_m), ``x`` is
    (n, n_m, p).  ``labels`` holds optional per-unit auxiliary columns
    (e.g. an exclusion flag or subgroup labels) carried through from the
    source file.
    """

    unit_ids: tuple[str, ...]
    strata: tuple[str, ...]
    exposure_codes: np.ndarray  # (n, 2) int8
    y: np.ndarray  # (n, 2, n_m)
    x: np.ndarray  # (n, n_m, p)
    covariate_names: tuple[str, ...]
    m_varying: str | None = None
    labels: Mapping[str, tuple] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "exposure_codes", np.asarray(self.exposure_codes, dtype=np.int8))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        n = len(self.unit_ids)
        if len(self.strata) != n:
            raise SchemaError("strata length does not match unit count")
        if self.y.shape[0] != n or self.y.shape[1] != 2:
            raise SchemaError(f"outcome array must be (n, 2, n_m); got {self.y.shape}")
        if self.x.shape[0] != n or self.x.shape[1] != self.y.shape[2]:
            raise SchemaError(f"covariate array must be (n, n_m, p); got {self.x.shape}")
        if self.x.shape[2] != len(self.covariate_names):
            raise SchemaError("covariate_names length does not match covariate columns")
        if self.m_varying is not None and self.m_varying not in self.covariate_names:
            raise SchemaError(f"m-varying covariate {self.m_varying!r} not among covariates")
        for name, vals in self.labels.items():
            if len(vals) != n:
                raise SchemaError(f"label column {name!r} length does not match unit count")
        object.__setattr__(self, "exposure_codes", _readonly(self.exposure_codes))
        object.__setattr__(self, "y", _readonly(self.y))
        object.__setattr__(self, "x", _readonly(self.x))

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_m(self) -> int:
        return self.y.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[2]

    @property
    def exposure_labels(self) -> np.ndarray:
        own = self.exposure_codes[:, 0]
        adj = self.exposure_codes[:, 1]
        out = np.where(own == 1, "treated", np.where(adj == 1, "neighbor", "control"))
        return out

    def exposure_counts(self) -> dict[str, int]:
        lab = self.exposure_labels
        return {name: int((lab == name).sum()) for name in ("treated", "neighbor", "control")}

    def stratum_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for s in self.strata:
            out[s] = out.get(s, 0) + 1
        return out

    def units(self) -> Iterator[UnitRecord]:
        for i in range(self.n_units):
            yield UnitRecord(
                unit_id=self.unit_ids[i],
                stratum=self.strata[i],
                exposure=ExposureStatus(int(self.exposure_codes[i, 0]), int(self.exposure_codes[i, 1])),
                covariates=self.x[i],
                outcomes=self.y[i],
            )

    def subset(self, mask: np.ndarray, rename: Sequence[str] | None = None) -> "PanelDataset":
        """New dataset keeping units where ``mask`` is true (or index array)."""
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        ids = tuple(rename) if rename is not None else tuple(self.unit_ids[i] for i in idx)
        return PanelDataset(
            unit_ids=ids,
            strata=tuple(self.strata[i] for i in idx),
            exposure_codes=self.exposure_codes[idx],
            y=self.y[idx],
            x=self.x[idx],
            covariate_names=self.covariate_names,
            m_varying=self.m_varying,
            labels={k: tuple(v[i] for i in idx) for k, v in self.labels.items()},
            warnings=self.warnings,
        )


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for :func:`load_panel`.

    ``covariates = None`` means every column not otherwise claimed is a
    covariate.  ``m_varying`` names the single covariate allowed to change
    across observation times.  ``label_columns`` are carried through as
    per-unit labels (values must agree across a unit's rows).
    """

    unit_id: str = "unit_id"
    stratum: str = "stratum"
    exposure: str = "exposure"
    t: str = "t"
    m: str = "m"
    outcome: str = "outcome"
    covariates: tuple[str, ...] | None = None
    m_varying: str | None = None
    label_columns: tuple[str, ...] = ("excluded",)


def _open_source(source) -> TextIO:
    if isinstance(source, (str, Path)):
        return open(source, "r", newline="", encoding="utf-8")
    return source


def load_panel(source, schema: PanelSchema | None = None) -> PanelDataset:
    """Read a long-format CSV into a validated :class:`PanelDataset`.

    Expected columns: ``unit_id,stratum,exposure,t,m,outcome,<cov_1>,...``.
    ``t`` must be 0 or 1; ``m`` runs 1..n_m; ``exposure`` is one of
    ``treated``, ``neighbor``, ``control``.  The stratum column is optional
    and defaults to the exposure label.  Raises :class:`SchemaError`,
    :class:`IncompletePanelError`, or :class:`ConsistencyError` with
    row-level diagnostics.
    """
    schema = schema or PanelSchema()
    stream = _open_source(source)
    close = isinstance(source, (str, Path))
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("input is empty: no header row")
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}
        for required in (schema.unit_id, schema.exposure, schema.t, schema.m, schema.outcome):
            if required not in col:
                raise SchemaError(f"missing required column {required!r}; header has {header}")
        has_stratum = schema.stratum in col
        label_cols = tuple(c for c in schema.label_columns if c in col)
        if schema.covariates is None:
            claimed = {schema.unit_id, schema.stratum, schema.exposure, schema.t, schema.m, schema.outcome}
            claimed.update(label_cols)
            cov_names = tuple(h for h in header if h not in claimed)
        else:
            cov_names = tuple(schema.covariates)
            for c in cov_names:
                if c not in col:
                    raise SchemaError(f"declared covariate column {c!r} not in header")
        if schema.m_varying is not None and schema.m_varying not in cov_names:
            raise SchemaError(f"m-varying covariate {schema.m_varying!r} not among covariates {cov_names}")

        units: dict[str, dict] = {}
        max_m = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            uid = row[col[schema.unit_id]]
            try:
                t = int(row[col[schema.t]])
                m = int(row[col[schema.m]])
            except ValueError:
                raise SchemaError(f"row {lineno}: t and m must be integers")
            if t not in (0, 1):
                raise SchemaError(f"row {lineno}: t must be 0 or 1, got {t}")
            if m < 1:
                raise SchemaError(f"row {lineno}: m must be >= 1, got {m}")
            max_m = max(max_m, m)
            try:
                outcome = float(row[col[schema.outcome]])
            except ValueError:
                raise SchemaError(f"row {lineno}: outcome is not numeric: {row[col[schema.outcome]]!r}")
            exposure = ExposureStatus.from_label(row[col[schema.exposure]].strip())
            stratum = row[col[schema.stratum]].strip() if has_stratum else exposure.label

            rec = units.setdefault(
                uid,
                {
                    "stratum": stratum,
                    "exposure": exposure,
                    "cells": {},
                    "covs": {},
                    "labels": {c: row[col[c]].strip() for c in label_cols},
                    "first_line": lineno,
                },
            )
            if rec["stratum"] != stratum:
                raise ConsistencyError(f"row {lineno}: unit {uid!r} stratum changed from {rec['stratum']!r} to {stratum!r}")
            if rec["exposure"] != exposure:
                raise ConsistencyError(f"row {lineno}: unit {uid!r} exposure changed")
            for c in label_cols:
                if rec["labels"][c] != row[col[c]].strip():
                    raise ConsistencyError(f"row {lineno}: unit {uid!r} label column {c!r} changed")
            if (t, m) in rec["cells"]:
                raise SchemaError(f"row {lineno}: duplicate cell (t={t}, m={m}) for unit {uid!r}")
            rec["cells"][(t, m)] = outcome

            for c in cov_names:
                try:
                    v = float(row[col[c]])
                except ValueError:
                    raise SchemaError(f"row {lineno}: covariate {c!r} is not numeric: {row[col[c]]!r}")
                key = (c, m) if c == schema.m_varying else c
                if key in rec["covs"]:
                    prev = rec["covs"][key]
                    if prev != v and not (np.isnan(prev) and np.isnan(v)):
                        raise ConsistencyError(
                            f"row {lineno}: unit {uid!r} covariate {c!r} is "
                            f"{v!r} but was {prev!r} in an earlier row"
                            + ("" if c == schema.m_varying else " (declare it m-varying if it changes over m)")
                        )
                else:
                    rec["covs"][key] = v

        if not units:
            raise SchemaError("input contains a header but no data rows")
        n_m = max_m

        ids, strata, exposures, ys, xs, label_vals = [], [], [], [], [], {c: [] for c in label_cols}
        for uid, rec in units.items():
            missing = [(t, m) for t in (0, 1) for m in range(1, n_m + 1) if (t, m) not in rec["cells"]]
            if missing:
                t0, m0 = missing[0]
                raise IncompletePanelError(
                    f"unit {uid!r} is missing {len(missing)} of {2 * n_m} outcome cells, "
                    f"first missing (t={t0}, m={m0})"
                )
            y = np.empty((2, n_m))
            for (t, m), v in rec["cells"].items():
                y[t, m - 1] = v
            x = np.empty((n_m, len(cov_names)))
            for j, c in enumerate(cov_names):
                if c == schema.m_varying:
                    for m in range(1, n_m + 1):
                        if (c, m) not in rec["covs"]:
                            raise IncompletePanelError(f"unit {uid!r} missing m-varying covariate {c!r} at m={m}")
                        x[m - 1, j] = rec["covs"][(c, m)]
                else:
                    x[:, j] = rec["covs"][c]
            ids.append(uid)
            strata.append(rec["stratum"])
            exposures.append((rec["exposure"].own_treatment, rec["exposure"].adjacency_exposure))
            ys.append(y)
            xs.append(x)
            for c in label_cols:
                label_vals[c].append(rec["labels"][c])

        return PanelDataset(
            unit_ids=tuple(ids),
            strata=tuple(strata),
            exposure_codes=np.array(exposures, dtype=np.int8),
            y=np.stack(ys),
            x=np.stack(xs) if cov_names else np.empty((len(ids), n_m, 0)),
            covariate_names=cov_names,
            m_varying=schema.m_varying,
            labels={c: tuple(v) for c, v in label_vals.items()},
        )
    finally:
        if close:
            stream.close()


def emit_panel(dataset: PanelDataset, target=None) -> str | None:
    """Write a dataset back to long-format CSV (inverse of :func:`load_panel`).

    Floats are written with ``repr`` so a round trip reproduces values
    bit-for-bit.  ``target`` may be a path or text stream; with ``None``
    the CSV text is returned.
    """
    buf = io.StringIO() if target is None else None
    stream = buf if target is None else _open_source_w(target)
    writer = csv.writer(stream, lineterminator="\n")
    header = ["unit_id", "stratum", "exposure", "t", "m", "outcome", *dataset.covariate_names]
    label_cols = list(dataset.labels)
    header += label_cols
    writer.writerow(header)
    labels = dataset.exposure_labels
    for i in range(dataset.n_units):
        for t in (0, 1):
            for m in range(dataset.n_m):
                row = [
                    dataset.unit_ids[i],
                    dataset.strata[i],
                    labels[i],
                    t,
                    m + 1,
                    repr(float(dataset.y[i, t, m])),
                ]
                row += [repr(float(v)) for v in dataset.x[i, m, :]]
                row += [dataset.labels[c][i] for c in label_cols]
                writer.writerow(row)
    if buf is not None:
        return buf.getvalue()
    if isinstance(target, (str, Path)):
        stream.close()
    return None


def _open_source_w(target) -> TextIO:
    if isinstance(target, (str, Path)):
        return open(target, "w", newline="", encoding="utf-8")
    return target


def apply_exclusion(dataset: PanelDataset, excluded: Iterable) -> PanelDataset:
    """Drop flagged units; the input dataset is left untouched.

    ``excluded`` is a boolean flag per unit (truthy = drop).  If every unit
    of some exposure status is dropped, a warning is attached to the result;
    estimation on the affected estimand will later fail with a group-empty
    error.
    """
    flags = np.asarray([bool(v) for v in excluded])
    if flags.shape[0] != dataset.n_units:
        raise SchemaError(f"exclusion flags have length {flags.shape[0]}, expected {dataset.n_units}")
    out = dataset.subset(~flags)
    warnings = list(dataset.warnings)
    before = dataset.exposure_counts()
    after = out.exposure_counts()
    for status, n_before in before.items():
        if n_before > 0 and after[status] == 0:
            warnings.append(f"exclusion removed all {n_before} units with exposure status {status!r}")
    return replace(out, warnings=tuple(warnings))


@dataclass(frozen=True)
class ComparisonFrame:
    """Two-group view of a dataset for one estimand.

    ``r`` marks the exposed group of interest (treated for ATT, neighbor
    for ATN); controls have ``r = 0``.  ``delta_y[:, m]`` is the per-unit
    outcome change Y(1, m) - Y(0, m).  ``x_base`` is the baseline (m = 1)
    covariate slice used by time-invariant propensity models.
    """

    estimand: str
    unit_ids: tuple[str, ...]
    strata: tuple[str, ...]
    r: np.ndarray  # (n,)
    delta_y: np.ndarray  # (n, n_m)
    pre_y: np.ndarray  # (n, n_m)
    post_y: np.ndarray  # (n, n_m)
    x: np.ndarray  # (n, n_m, p)
    x_base: np.ndarray  # (n, p)
    covariate_names: tuple[str, ...]
    source_index: np.ndarray | None = None  # positions in the source dataset

    def __post_init__(self):
        for name in ("r", "delta_y", "pre_y", "post_y", "x", "x_base"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=float)))
        idx = self.source_index if self.source_index is not None else np.arange(self.r.shape[0])
        object.__setattr__(self, "source_index", _readonly(np.asarray(idx, dtype=int)))

    @property
    def n_units(self) -> int:
        return self.r.shape[0]

    @property
    def n_m(self) -> int:
        return self.delta_y.shape[1]

    def covariate_indices(self, names: Sequence[str] | None) -> np.ndarray:
        if names is None:
            return np.arange(len(self.covariate_names))
        idx = []
        for name in names:
            if name not in self.covariate_names:
                raise SchemaError(f"unknown covariate {name!r}; frame has {self.covariate_names}")
            idx.append(self.covariate_names.index(name))
        return np.asarray(idx, dtype=int)

    def design(self, m: int, names: Sequence[str] | None = None) -> np.ndarray:
        """Covariate matrix at observation time ``m`` (0-based slice index)."""
        return self.x[:, m, :][:, self.covariate_indices(names)]

    def design_base(self, names: Sequence[str] | None = None) -> np.ndarray:
        return self.x_base[:, self.covariate_indices(names)]


def make_comparison(dataset: PanelDataset, estimand: str) -> ComparisonFrame:
    """Build the two-group frame for ``att`` (treated vs control) or ``atn``
    (neighbor vs control); units with the irrelevant exposure are dropped."""
    estimand = estimand.lower()
    if estimand not in (ATT, ATN):
        raise SchemaError(f"unknown estimand {estimand!r}; expected 'att' or 'atn'")
    labels = dataset.exposure_labels
    exposed_label = _EXPOSED_LABEL[estimand]
    exposed = labels == exposed_label
    control = labels == "control"
    for name, mask in ((exposed_label, exposed), ("control", control)):
        if int(mask.sum()) == 0:
            raise GroupEmptyError(f"estimand {estimand}: no units with exposure status {name!r}")
    keep = exposed | control
    idx = np.flatnonzero(keep)
    return ComparisonFrame(
        estimand=estimand,
        unit_ids=tuple(dataset.unit_ids[i] for i in idx),
        strata=tuple(dataset.strata[i] for i in idx),
        r=exposed[idx].astype(float),
        delta_y=dataset.y[idx, 1, :] - dataset.y[idx, 0, :],
        pre_y=dataset.y[idx, 0, :],
        post_y=dataset.y[idx, 1, :],
        x=dataset.x[idx],
        x_base=dataset.x[idx, 0, :],
        covariate_names=dataset.covariate_names,
        source_index=idx,
    )
