import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from spinbath.analysis import (
    InsufficientDecayError,
    StretchedExponentialRegressor,
    aggregate,
    fit_stretched,
    instantaneous_exponent,
    one_over_e_time,
    stretched_exp,
    write_fit_report,
)
from spinbath.cce import CoherenceCurve, time_grid

GRID = time_grid(0.1, 1e5, 24)


@given(st.floats(1.0, 5000.0), st.floats(0.4, 4.0))
def test_recovers_synthetic_parameters(T2, n):
    res = fit_stretched(GRID, stretched_exp(GRID, T2, n))
    assert res.T2 == pytest.approx(T2, rel=1e-6)
    assert res.n == pytest.approx(n, rel=1e-6)
    assert res.quality < 1e-8


@given(st.floats(5.0, 500.0), st.floats(0.5, 3.0), st.floats(0.01, 100.0))
def test_time_rescaling_equivariance(T2, n, scale):
    rng = np.random.default_rng(0)
    vals = stretched_exp(GRID, T2, n) * (1 + 0.02 * rng.normal(size=len(GRID)))
    a = fit_stretched(GRID, vals)
    b = fit_stretched(GRID * scale, vals)
    assert b.T2 == pytest.approx(a.T2 * scale, rel=1e-7)
    assert b.n == pytest.approx(a.n, rel=1e-7)


def test_tail_is_excluded():
    t = time_grid(1, 1e4, 32)
    clean = stretched_exp(t, 100, 2)
    first = np.flatnonzero(clean < 1e-2)[0]
    noisy = clean.copy()
    noisy[first + 1 :] = 5e-3  # a noise floor after the decay
    res = fit_stretched(t, noisy)
    assert res.T2 == pytest.approx(100, rel=1e-6) and res.n == pytest.approx(2, rel=1e-6)
    assert res.fit_window[1] <= 300


def test_window_and_errors():
    t = time_grid(1, 1e4, 32)
    v = stretched_exp(t, 100, 1)
    res = fit_stretched(t, v, window=(10, 500))
    assert res.fit_window[0] >= 10 and res.T2 == pytest.approx(100, rel=1e-6)
    with pytest.raises(InsufficientDecayError):
        fit_stretched(t, np.ones_like(t))
    with pytest.raises(ValueError):
        fit_stretched(t[:5], stretched_exp(t[:5], 1, 1))


def test_extrapolated_fit():
    t = time_grid(1, 100, 32)
    res = fit_stretched(t, stretched_exp(t, 150, 1.5))
    assert res.extrapolated and res.t_1e is None
    assert res.T2 == pytest.approx(150, rel=1e-5)


def test_accepts_curve_and_reports_errors():
    curve = CoherenceCurve(GRID, stretched_exp(GRID, 30, 1.2) * np.exp(0.3j))
    res = fit_stretched(curve)
    assert res.T2 == pytest.approx(30, rel=1e-6)
    assert res.T2_err >= 0 and res.n_err >= 0


def test_one_over_e_time():
    t = np.array([1.0, 10.0, 100.0])
    assert one_over_e_time(t, np.array([1.0, 0.5, 0.1])) > 10
    assert one_over_e_time(t, np.array([1.0, 0.9, 0.8])) is None
    assert one_over_e_time(t, np.array([0.1, 0.05, 0.01])) == 1.0
    assert one_over_e_time(t, stretched_exp(t, 10, 1)) == pytest.approx(10)


@given(st.floats(0.5, 4.0))
def test_instantaneous_exponent_constant(n):
    ie = instantaneous_exponent(GRID, stretched_exp(GRID, 50, n))
    # early points have 1 - |L| near 1e-11, so log(-log|L|) carries ~1e-6 rounding
    assert not ie.undefined and np.allclose(ie.n, n, rtol=1e-5)


def test_instantaneous_exponent_edge_cases():
    ie = instantaneous_exponent(GRID[:3], stretched_exp(GRID[:3], 50, 1))
    assert ie.undefined
    with pytest.raises(ValueError):
        instantaneous_exponent(GRID, GRID, window=4)


def test_aggregate(tmp_path):
    fits = [fit_stretched(GRID, stretched_exp(GRID, T2, 1.0)) for T2 in (10, 20, 30)] + [None]
    stats = aggregate(fits, [stretched_exp(GRID, 10, 1), stretched_exp(GRID, 20, 1)])
    assert stats.mean_T2 == pytest.approx(20, rel=1e-6)
    assert stats.std_T2 == pytest.approx(10, rel=1e-6)
    assert stats.n_configs == 3 and stats.n_failed == 1
    assert stats.mean_curve.shape == GRID.shape
    stats.to_json(tmp_path / "a.json", label="x")
    assert '"label": "x"' in (tmp_path / "a.json").read_text()
    with pytest.raises(ValueError):
        aggregate([None])
    write_fit_report(tmp_path / "f.csv", fits)
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert len(rows) == 5 and rows[4][1] == "nan"


def test_regressor():
    est = StretchedExponentialRegressor()
    rng = np.random.default_rng(1)
    t = rng.permutation(GRID)
    est.fit(t[:, None], stretched_exp(t, 40, 2.5))
    assert est.T2_ == pytest.approx(40, rel=1e-6) and est.n_ == pytest.approx(2.5, rel=1e-6)
    assert np.allclose(est.predict([40.0]), np.exp(-1))
    assert est.score(GRID[:, None], stretched_exp(GRID, 40, 2.5)) == pytest.approx(1.0)
    assert clone(est).get_params() == {"window": None}
    with pytest.raises(Exception):
        StretchedExponentialRegressor().predict([1.0])
