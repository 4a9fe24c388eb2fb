"""Residual distribution and benefit-score tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paft.errors import DataError
from paft.likelihood import PaftParams, residual_exact
from paft.residuals import (
    BenefitScore,
    KmCurve,
    estimate_residuals,
    km_estimate,
    prob_death_before_tau,
    survival_at,
)

from conftest import make_dataset
from oracles import km_brute


# -- km_estimate ----------------------------------------------------------


def test_km_worked_example():
    c = km_estimate([1.0, 2.0, 3.0], [1, 0, 1])
    assert np.array_equal(c.times, [1.0, 2.0, 3.0])
    assert np.array_equal(c.at_risk, [3, 2, 1])
    assert np.array_equal(c.events, [1, 0, 1])
    assert np.array_equal(c.censored, [0, 1, 0])
    assert np.array_equal(c.survival, [2.0 / 3.0, 2.0 / 3.0, 0.0])
    assert c.n == 3
    assert not c.defective
    assert c.last_event_time == 3.0


def test_km_ties_process_events_first():
    # a subject censored at t is still at risk for the deaths at t
    c = km_estimate([2.0, 2.0, 2.0], [1, 0, 1])
    assert np.array_equal(c.times, [2.0])
    assert np.array_equal(c.at_risk, [3])
    assert np.array_equal(c.events, [2])
    assert np.array_equal(c.censored, [1])
    assert c.survival[0] == pytest.approx(1.0 / 3.0, abs=0)
    assert c.defective


def test_km_all_events_equals_ecdf_exactly():
    for trial in range(25):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(1, 21))
        vals = np.round(rng.exponential(2.0, n), 3)
        c = km_estimate(vals, np.ones(n, dtype=int))
        ecdf_surv = np.array([np.sum(vals > t) / n for t in c.times])
        assert np.array_equal(c.survival, ecdf_surv)
        assert c.survival[-1] == 0.0
        assert not c.defective


def test_km_matches_risk_set_recomputation():
    for trial in range(25):
        rng = np.random.default_rng(1000 + trial)
        n = int(rng.integers(2, 30))
        vals = np.round(rng.exponential(2.0, n), 2)
        ev = (rng.random(n) < 0.7).astype(int)
        c = km_estimate(vals, ev)
        bt, bs = km_brute(vals, ev)
        assert np.array_equal(c.times, bt)
        assert np.max(np.abs(c.survival - bs)) <= 1e-14


def test_km_defective_when_largest_value_censored():
    c = km_estimate([1.0, 2.0], [1, 0])
    assert c.defective
    assert c.survival[-1] == 0.5
    assert c.last_event_time == 1.0


def test_km_last_event_time_without_events():
    c = km_estimate([1.0, 2.0], [0, 0])
    assert c.last_event_time == -np.inf
    assert np.array_equal(c.survival, [1.0, 1.0])


@pytest.mark.parametrize(
    "vals,ev,msg",
    [
        ([], [], "empty"),
        ([1.0, np.nan], [1, 1], "finite"),
        ([1.0, 2.0], [1, 2], "0 or 1"),
        ([1.0, 2.0], [1], "equally long"),
    ],
)
def test_km_validation(vals, ev, msg):
    with pytest.raises(DataError, match=msg):
        km_estimate(vals, ev)


@given(
    vals=st.lists(st.floats(0.01, 50.0, allow_nan=False), min_size=1, max_size=40),
    bits=st.lists(st.integers(0, 1), min_size=40, max_size=40),
)
@settings(max_examples=60, deadline=None)
def test_km_survival_is_monotone_cadlag(vals, bits):
    ev = bits[: len(vals)]
    c = km_estimate(vals, ev)
    assert np.all(c.survival >= 0.0) and np.all(c.survival <= 1.0)
    assert np.all(np.diff(c.survival) <= 0.0)
    assert np.all(np.diff(c.times) > 0)
    assert int(c.events.sum() + c.censored.sum()) == len(vals)


# -- survival_at ----------------------------------------------------------


def test_survival_at_right_continuous():
    c = km_estimate([1.0, 2.0, 3.0], [1, 0, 1])
    assert survival_at(c, 0.5) == 1.0
    assert survival_at(c, 1.0) == pytest.approx(2.0 / 3.0, abs=0)
    assert survival_at(c, 2.5) == pytest.approx(2.0 / 3.0, abs=0)
    assert survival_at(c, 3.0) == 0.0
    assert survival_at(c, 100.0) == 0.0


# -- estimate_residuals ---------------------------------------------------


def test_estimate_residuals_matches_per_record(rng):
    ds = make_dataset(rng, n=20, d=2)
    params = PaftParams(0.7, 1.2, (0.4, -0.3))
    r = estimate_residuals(ds, params)
    expect = np.array([residual_exact(rec, params) for rec in ds.records])
    # vectorized evaluation reorders the scalar arithmetic by an ulp
    assert np.max(np.abs(r - expect)) <= 1e-12


# -- prob_death_before_tau ------------------------------------------------


@pytest.fixture
def resid_curve(rng):
    ds = make_dataset(rng, n=40, d=1)
    params = PaftParams(0.8, 1.5, (0.5,))
    r = estimate_residuals(ds, params)
    return params, km_estimate(r, ds.event)


def test_benefit_score_threshold_and_probability(resid_curve):
    params, curve = resid_curve
    score = prob_death_before_tau([0.3], params, curve)
    expect_thr = np.log(params.tau) - 0.5 * 0.3
    assert score.threshold == pytest.approx(expect_thr, abs=1e-15)
    assert score.p_hat == 1.0 - survival_at(curve, score.threshold)
    assert 0.0 <= score.p_hat <= 1.0


def test_benefit_score_no_covariates():
    curve = km_estimate([0.2, 0.5, 0.9], [1, 1, 1])
    score = prob_death_before_tau([], PaftParams(0.5, 2.0), curve)
    assert score.threshold == pytest.approx(np.log(2.0), abs=1e-15)
    assert score.p_hat == 1.0 - 1.0 / 3.0  # log 2 passes 0.2 and 0.5


def test_benefit_score_flags_unidentified_tail():
    curve = km_estimate([0.2, 0.8], [1, 0])  # defective: largest censored
    assert curve.defective
    params = PaftParams(0.5, 10.0)
    score = prob_death_before_tau([], params, curve)
    assert score.threshold > curve.last_event_time
    assert score.tail_defective
    assert score.p_hat == 0.5  # last attained CDF value
    # below the last event the flag stays off
    ok = prob_death_before_tau([], PaftParams(0.5, 1.0), curve)
    assert not ok.tail_defective


def test_benefit_score_not_flagged_when_curve_reaches_zero():
    curve = km_estimate([0.2, 0.8], [1, 1])
    score = prob_death_before_tau([], PaftParams(0.5, 10.0), curve)
    assert not score.tail_defective
    assert score.p_hat == 1.0


def test_benefit_score_validation(resid_curve):
    params, curve = resid_curve
    with pytest.raises(DataError, match="tau > 0"):
        prob_death_before_tau([0.0], PaftParams(0.5, 0.0, (0.1,)), curve)
    with pytest.raises(DataError, match="coefficients"):
        prob_death_before_tau([0.1, 0.2], params, curve)
