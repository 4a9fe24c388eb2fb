"""Right-censored trial data: container, CSV round trip, validation.

A dataset is a flat table with one row per subject:

    time,event,treatment[,<covariate names...>]

``time`` is the follow-up time (death or censoring, > 0), ``event`` is 1
for an observed death and 0 for censoring, ``treatment`` is the arm
indicator, and any remaining columns are numeric covariates.  Columns are
stored as numpy arrays; ``records`` gives a per-subject view when that is
more convenient.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "SubjectRecord",
    "TrialDataset",
    "Finding",
    "CovariateTransform",
    "load_dataset",
    "serialize_dataset",
    "validate",
    "standardize_covariate",
]

_FLOAT_FMT = ".12g"


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: follow-up time, event flag, arm, covariate values."""

    time: float
    event: int
    treatment: int
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class Finding:
    """A validation message. ``severity`` is 'error' or 'warning'."""

    severity: str
    message: str


@dataclass(frozen=True)
class CovariateTransform:
    """Location/scale pair removed from a covariate column."""

    name: str
    mean: float
    sd: float


class TrialDataset:
    """Columnar container for a right-censored two-arm trial.

    Construction checks per-subject invariants (positive finite times,
    binary flags, finite covariates).  Sample-level requirements such as
    "at least one event" are reported by :func:`validate` instead so that
    partial datasets can still be loaded and inspected.
    """

    def __init__(self, time, event, treatment, covariates=None, covariate_names=()):
        time = np.asarray(time, dtype=float)
        event = np.asarray(event)
        treatment = np.asarray(treatment)
        if time.ndim != 1:
            raise DataError("time must be a 1-d sequence")
        n = time.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if event.shape != (n,) or treatment.shape != (n,):
            raise DataError("time, event, and treatment must have equal length")
        for name, col in (("time", time),):
            if not np.all(np.isfinite(col)):
                raise DataError(f"{name} contains non-finite values")
        if np.any(time <= 0):
            bad = int(np.argmax(time <= 0)) + 1
            raise DataError(f"row {bad}: time must be > 0")
        for name, col in (("event", event), ("treatment", treatment)):
            as_float = np.asarray(col, dtype=float)
            if not np.all(np.isin(as_float, (0.0, 1.0))):
                bad = int(np.argmax(~np.isin(as_float, (0.0, 1.0)))) + 1
                raise DataError(f"row {bad}: {name} must be 0 or 1")
        if covariates is None:
            covariates = np.empty((n, 0), dtype=float)
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(n, -1) if covariates.size else covariates.reshape(n, 0)
        if covariates.shape[0] != n:
            raise DataError("covariate rows do not match the number of subjects")
        if not np.all(np.isfinite(covariates)):
            bad = int(np.argmax(~np.all(np.isfinite(covariates), axis=1))) + 1
            raise DataError(f"row {bad}: covariates must be finite numbers")
        covariate_names = tuple(covariate_names)
        if len(covariate_names) != covariates.shape[1]:
            raise DataError(
                f"{len(covariate_names)} covariate names for {covariates.shape[1]} columns"
            )
        self.time = time
        self.event = np.asarray(event, dtype=int)
        self.treatment = np.asarray(treatment, dtype=int)
        self.covariates = covariates
        self.covariate_names = covariate_names
        for arr in (self.time, self.event, self.treatment, self.covariates):
            arr.setflags(write=False)

    # -- basic protocol ------------------------------------------------

    def __len__(self):
        return self.time.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return (
            self.covariate_names == other.covariate_names
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.event, other.event)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.covariates, other.covariates)
        )

    def __repr__(self):
        return (
            f"TrialDataset(n={len(self)}, events={self.n_events}, "
            f"covariates={list(self.covariate_names)})"
        )

    # -- derived datasets ----------------------------------------------

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord], covariate_names=()):
        records = list(records)
        return cls(
            [r.time for r in records],
            [r.event for r in records],
            [r.treatment for r in records],
            [r.covariates for r in records] if covariate_names else None,
            covariate_names,
        )

    @property
    def records(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(
                float(self.time[i]),
                int(self.event[i]),
                int(self.treatment[i]),
                tuple(self.covariates[i]),
            )
            for i in range(len(self))
        ]

    def subset(self, indices) -> "TrialDataset":
        """Row selection, used for bootstrap resamples."""
        idx = np.asarray(indices, dtype=int)
        return TrialDataset(
            self.time[idx],
            self.event[idx],
            self.treatment[idx],
            self.covariates[idx],
            self.covariate_names,
        )

    def with_treatment(self, treatment) -> "TrialDataset":
        """Same rows with a replacement arm column (permutation tests)."""
        return TrialDataset(
            self.time, self.event, treatment, self.covariates, self.covariate_names
        )

    def without_covariates(self) -> "TrialDataset":
        return TrialDataset(self.time, self.event, self.treatment)


# -- CSV ---------------------------------------------------------------


def load_dataset(source) -> TrialDataset:
    """Read a dataset from a CSV path or text buffer.

    The header must start with ``time,event,treatment``; any further
    columns are covariates.  Every field must be a decimal literal.
    Errors name the offending data row (1-based) and field.  Blank lines
    and ``#`` comment lines (the tool stamps a manifest reference as one)
    are skipped.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [
        ln for ln in text.splitlines()
        if ln.strip() != "" and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise DataError("empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:3] != ["time", "event", "treatment"]:
        raise DataError("header must start with 'time,event,treatment'")
    names = tuple(header[3:])
    width = len(header)
    time, event, treatment, rows = [], [], [], []
    for rownum, ln in enumerate(lines[1:], start=1):
        fields = [f.strip() for f in ln.split(",")]
        if len(fields) != width:
            raise DataError(f"row {rownum}: expected {width} fields, got {len(fields)}")
        vals = []
        for name, raw in zip(header, fields):
            try:
                vals.append(float(raw))
            except ValueError:
                raise DataError(f"row {rownum}: field '{name}' is not a number: {raw!r}") from None
        t, d, z = vals[0], vals[1], vals[2]
        if not np.isfinite(t) or t <= 0:
            raise DataError(f"row {rownum}: time must be > 0")
        if d not in (0.0, 1.0):
            raise DataError(f"row {rownum}: event must be 0 or 1")
        if z not in (0.0, 1.0):
            raise DataError(f"row {rownum}: treatment must be 0 or 1")
        time.append(t)
        event.append(int(d))
        treatment.append(int(z))
        rows.append(vals[3:])
    try:
        return TrialDataset(time, event, treatment, rows if names else None, names)
    except DataError:
        raise
    except ValueError as exc:  # pragma: no cover - defensive
        raise DataError(str(exc)) from exc


def serialize_dataset(ds: TrialDataset, target=None) -> str | None:
    """Write ``ds`` as CSV, rendering floats with 12 significant digits.

    Loading the output reproduces the dataset exactly whenever the
    original values are representable in 12 significant digits, which
    makes load/serialize an identity on files the package itself wrote.
    """
    buf = io.StringIO()
    buf.write(",".join(("time", "event", "treatment") + ds.covariate_names) + "\n")
    for i in range(len(ds)):
        fields = [format(ds.time[i], _FLOAT_FMT), str(int(ds.event[i])), str(int(ds.treatment[i]))]
        fields.extend(format(v, _FLOAT_FMT) for v in ds.covariates[i])
        buf.write(",".join(fields) + "\n")
    text = buf.getvalue()
    if target is None:
        return text
    if hasattr(target, "write"):
        target.write(text)
        return None
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(text)
    return None


# -- validation --------------------------------------------------------


def validate(ds: TrialDataset) -> list[Finding]:
    """Check sample-level requirements; report, never fix.

    Severity 'error' marks conditions under which the model likelihood is
    undefined or meaningless; fitting refuses to start on those.
    Warnings flag designs the optimizer will accept but where some
    parameter is weakly identified.
    """
    findings = []
    n = len(ds)
    if n < 2:
        findings.append(Finding("error", f"need at least 2 subjects, have {n}"))
    events = ds.n_events
    if events == 0:
        findings.append(Finding("error", "no observed events; likelihood is undefined"))
    arms = np.unique(ds.treatment)
    if arms.size == 1:
        which = "treated" if arms[0] == 1 else "control"
        findings.append(Finding("warning", f"alpha not identified: all subjects are {which}"))
    else:
        for arm, label in ((0, "control"), (1, "treated")):
            mask = ds.treatment == arm
            if mask.any() and ds.event[mask].sum() == 0:
                findings.append(Finding("warning", f"no events in the {label} arm"))
    if n and events and events / n < 0.10:
        findings.append(Finding("warning", f"event rate is low: {events}/{n}"))
    return findings


def standardize_covariate(ds: TrialDataset, index: int):
    """Center and scale covariate ``index`` to mean 0, sd 1.

    Uses the sample (n-1) standard deviation pooled over both arms.
    Returns the transformed dataset together with the removed
    :class:`CovariateTransform` so callers can map estimates back.
    """
    if not 0 <= index < ds.n_covariates:
        raise DataError(f"no covariate at index {index}")
    col = ds.covariates[:, index]
    if len(ds) < 2:
        raise DataError("standardization needs at least 2 subjects")
    mean = float(np.mean(col))
    sd = float(np.std(col, ddof=1))
    if sd == 0.0:
        raise DataError(f"covariate '{ds.covariate_names[index]}' has zero variance")
    cov = ds.covariates.copy()
    cov[:, index] = (col - mean) / sd
    out = TrialDataset(ds.time, ds.event, ds.treatment, cov, ds.covariate_names)
    return out, CovariateTransform(ds.covariate_names[index], mean, sd)
