"""Residual survival curve and per-subject benefit scores.

After a fit, the exact model residuals (with follow-up time standing in
for the death time) are right-censored draws from the error
distribution.  Their Kaplan-Meier curve estimates that distribution
without assuming a shape, and evaluating its CDF at
``log(tau) - beta'x`` gives the probability that a subject with
covariates ``x`` would die before the lag time ends, i.e. before
treatment could start to matter.  The treatment arm plays no role here:
the score is a property of the covariates under the fitted model.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import TrialDataset
from .errors import DataError
from .likelihood import PaftParams, _residuals_exact

__all__ = [
    "KmCurve",
    "BenefitScore",
    "estimate_residuals",
    "km_estimate",
    "survival_at",
    "prob_death_before_tau",
]


@dataclass(frozen=True)
class KmCurve:
    """Product-limit estimate over distinct residual values.

    ``survival[k]`` is the curve just after ``times[k]``; the curve is
    right-continuous.  ``defective`` is True when the largest value is
    censored, in which case the estimated CDF never reaches 1.
    """

    times: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    censored: np.ndarray
    survival: np.ndarray
    n: int

    @property
    def defective(self) -> bool:
        return bool(self.survival[-1] > 0.0)

    @property
    def last_event_time(self) -> float:
        has = self.events > 0
        return float(self.times[has][-1]) if has.any() else -np.inf


@dataclass(frozen=True)
class BenefitScore:
    """P(death before the lag time ends) for one covariate vector."""

    p_hat: float
    threshold: float
    tail_defective: bool


def estimate_residuals(ds: TrialDataset, params: PaftParams) -> np.ndarray:
    """Exact model residuals for every subject at the given parameters."""
    return _residuals_exact(ds, params)


def km_estimate(values, events) -> KmCurve:
    """Kaplan-Meier curve of right-censored values.

    At tied values, events are processed before censorings: a subject
    censored at ``t`` still counts as at risk for deaths at ``t``.
    """
    values = np.asarray(values, dtype=float)
    flags = np.asarray(events, dtype=int)
    if values.ndim != 1 or values.shape != flags.shape:
        raise DataError("values and event flags must be 1-d and equally long")
    if values.size == 0:
        raise DataError("empty sample")
    if not np.all(np.isfinite(values)):
        raise DataError("values must be finite")
    if not np.all(np.isin(flags, (0, 1))):
        raise DataError("event flags must be 0 or 1")
    n = values.size
    times, inverse = np.unique(values, return_inverse=True)
    d = np.bincount(inverse, weights=flags, minlength=times.size).astype(int)
    total = np.bincount(inverse, minlength=times.size).astype(int)
    c = total - d
    left = np.concatenate(([0], np.cumsum(total)[:-1]))
    at_risk = n - left
    # exact rational product, rounded once per step: a float cumprod of
    # the factors drifts an ulp off the ECDF it must telescope to when
    # nothing is censored
    survival = np.empty(times.size)
    s = Fraction(1)
    for k in range(times.size):
        s *= Fraction(int(at_risk[k] - d[k]), int(at_risk[k]))
        survival[k] = float(s)
    return KmCurve(times, at_risk, d, c, survival, n)


def survival_at(curve: KmCurve, t: float) -> float:
    """Right-continuous survival probability at ``t``."""
    idx = int(np.searchsorted(curve.times, t, side="right"))
    if idx == 0:
        return 1.0
    return float(curve.survival[idx - 1])


def prob_death_before_tau(covariates, params: PaftParams, curve: KmCurve) -> BenefitScore:
    """Estimated probability of dying before the treatment lag elapses.

    Evaluates the residual CDF at ``log(tau) - beta'x``.  When that
    threshold lies beyond the last observed event and the curve is
    defective, the last attained CDF value is used and the score is
    flagged, since the tail mass there is unidentified.
    """
    if params.tau <= 0:
        raise DataError("benefit score needs tau > 0")
    x = np.asarray(covariates, dtype=float).ravel()
    if x.size != len(params.beta):
        raise DataError(f"{len(params.beta)} coefficients for {x.size} covariates")
    threshold = float(np.log(params.tau) - (x @ np.asarray(params.beta) if x.size else 0.0))
    p = 1.0 - survival_at(curve, threshold)
    flagged = curve.defective and threshold > curve.last_event_time
    return BenefitScore(float(p), threshold, bool(flagged))
