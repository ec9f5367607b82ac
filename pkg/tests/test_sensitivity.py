import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from zeroscale import (Dataset, Transform, extensive_margin, find_scale_for_target, rescale_outcome,
                       sensitivity_curve, theta_at, tstat_table)
from zeroscale.errors import BracketNotFound, InputError, NoExtensiveMargin
from zeroscale.sensitivity import rescale_summary
from zeroscale.simulate import lognormal_zeros, two_point


@pytest.fixture(scope="module")
def tp():
    return two_point(100000, 0)


def _small(seed, n=80):
    rng = np.random.default_rng(seed)
    D = (np.arange(n) % 2).astype(float)
    y = np.where(rng.random(n) < 0.4 + 0.3 * D, rng.lognormal(0, 1, n), 0.0)
    return Dataset(y, D, covariates=rng.normal(size=(n, 1)), cluster=np.arange(n) // 4)


def test_two_point_theta_one(tp):
    d, manifest = tp
    assert manifest["theta_log1p_a1"] == pytest.approx(0.75 * math.log(3) - 0.5 * math.log(2), abs=1e-15)
    r = theta_at(d, Transform.log1p(), 1.0)
    assert abs(r.value - 0.4774) < 3 * r.se
    assert r.meta["a"] == 1.0


def test_zero_scale_limit(tp):
    d, _ = tp
    for t in (Transform.log1p(), Transform.arcsinh()):
        assert abs(theta_at(d, t, 1e-12).value) < 1e-9
    assert abs(theta_at(_small(3), Transform.log1p(), 1e-12).value) < 1e-10


def test_slope_matches_extensive_margin(tp):
    d, _ = tp
    curve = sensitivity_curve(d, Transform.arcsinh(), np.logspace(4, 8, 9))
    assert curve.slope() == pytest.approx(0.25, abs=0.01)
    assert curve.slope() == pytest.approx(curve.extensive_margin.value, abs=1e-4)


def test_strictly_positive_outcome_is_insensitive():
    rng = np.random.default_rng(4)
    n = 5000
    D = (np.arange(n) % 2).astype(float)
    y = np.exp(rng.normal(size=n) + 0.3 * D) + 1.0
    d = Dataset(y, D)
    curve = sensitivity_curve(d, Transform.arcsinh(), np.logspace(6, 12, 7))
    top = curve.theta[curve.grid >= 1e11]
    assert np.ptp(top) < 1e-4
    log_ate = np.log(y[D == 1]).mean() - np.log(y[D == 0]).mean()
    assert curve.theta[-1] == pytest.approx(log_ate, abs=1e-6)


def test_margin_times_log_factor_worked_example():
    # raw change 0.453 - 0.201 = 0.252 against 0.055 * log(100)
    assert 0.453 - 0.201 == pytest.approx(0.252, abs=1e-12)
    assert round(0.055 * math.log(100), 3) == 0.253


def test_rescale_summary_predicts_change(tp):
    d, _ = tp
    s = rescale_summary(d, Transform.arcsinh(), 100.0)
    assert s["raw_change"] == pytest.approx(s["theta_factor"] - s["theta_1"])
    assert s["pct_change"] == pytest.approx(100 * s["raw_change"] / abs(s["theta_1"]))
    assert s["predicted_change"] == pytest.approx(s["extensive_margin"] * math.log(100))


def test_curve_contract(tp, tmp_path):
    d, _ = tp
    curve = sensitivity_curve(d, Transform.log1p())
    assert curve.grid.size == 25 and curve.grid[0] == pytest.approx(1e-4) and curve.grid[-1] == pytest.approx(1e8)
    assert curve.anchor == 1.0
    k = int(np.flatnonzero(curve.grid == 1.0)[0])
    assert curve.approx[k] == curve.theta[k]
    np.testing.assert_allclose(curve.approx, curve.theta[k] + curve.extensive_margin.value * np.log(curve.grid))
    assert curve.extensive_margin.se >= 0
    curve.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "a,theta,se,tstat,approx" and len(lines) == 26
    curve.to_json(tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text())["grid"][0] == pytest.approx(1e-4)


def test_grid_validation():
    d = _small(1)
    for bad in ([], [1.0, 1.0], [2.0, 1.0], [0.0, 1.0], [1.0, math.inf]):
        with pytest.raises(InputError):
            sensitivity_curve(d, Transform.arcsinh(), bad)


def test_thread_count_does_not_change_output():
    d = _small(2)
    a = sensitivity_curve(d, Transform.arcsinh(), threads=1)
    b = sensitivity_curve(d, Transform.arcsinh(), threads=4)
    assert a.theta.tobytes() == b.theta.tobytes() and a.se.tobytes() == b.se.tobytes()


@pytest.mark.parametrize("target", [0.1, 1.0, 10.0])
def test_find_scale_hits_target(tp, target):
    d, _ = tp
    sol = find_scale_for_target(d, Transform.log1p(), target)
    assert abs(abs(theta_at(d, Transform.log1p(), sol.a).value) - target) < 1e-6
    assert sol.steps < 60


def test_find_scale_target_at_one(tp):
    d, _ = tp
    target = abs(theta_at(d, Transform.arcsinh(), 1.0).value)
    sol = find_scale_for_target(d, Transform.arcsinh(), target)
    assert abs(abs(theta_at(d, Transform.arcsinh(), sol.a).value) - target) < 1e-6


def test_find_scale_errors():
    rng = np.random.default_rng(0)
    d = Dataset(rng.exponential(size=50) + 0.1, (np.arange(50) % 2).astype(float))
    with pytest.raises(NoExtensiveMargin):
        find_scale_for_target(d, Transform.arcsinh(), 1.0)
    with pytest.raises(InputError):
        find_scale_for_target(_small(0), Transform.arcsinh(), -1.0)
    d, _ = two_point(2000, 1)
    with pytest.raises(BracketNotFound):
        find_scale_for_target(d, Transform.log1p(), 1e6)


def test_tstat_table_converges_on_two_point(tp):
    d, _ = tp
    table = tstat_table(d, Transform.arcsinh(), [1e10])
    assert table.convergence_expected
    assert abs(table.t_theta[0] - table.t_gamma) < 0.01 * abs(table.t_gamma)


def test_tstat_table_flags_zero_margin():
    y = np.array([0, 1, 2, 0, 3, 1], dtype=float)
    D = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    table = tstat_table(Dataset(y, D), Transform.arcsinh(), [1.0, 1e10])
    assert abs(extensive_margin(Dataset(y, D)).value) < 1e-12
    assert table.convergence_expected is False


def test_dollars_to_cents(tp):
    d, _ = tp
    cents = rescale_outcome(d, 100.0)
    pre = theta_at(cents, Transform.arcsinh(), 1.0)
    # the same numbers fed to the same estimator
    same = theta_at(Dataset(d.outcome * 100.0, d.treatment), Transform.arcsinh(), 1.0)
    assert pre.tstat == same.tstat
    assert pre.tstat == pytest.approx(theta_at(d, Transform.arcsinh(), 100.0).tstat, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(-20, 20), st.floats(1e-3, 1e6))
def test_compensation_identity_power_of_two(seed, e, a):
    d = _small(seed)
    k = 2.0 ** e
    for t in (Transform.arcsinh(), Transform.log1p()):
        lhs = theta_at(rescale_outcome(d, k), t, a)
        rhs = theta_at(d, t, k * a)
        assert (lhs.value, lhs.se) == (rhs.value, rhs.se)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e6))
def test_compensation_identity_close(seed, k, a):
    d = _small(seed)
    lhs = theta_at(rescale_outcome(d, k), Transform.arcsinh(), a)
    rhs = theta_at(d, Transform.arcsinh(), k * a)
    assert lhs.value == pytest.approx(rhs.value, rel=1e-12, abs=1e-12)
    assert lhs.se == pytest.approx(rhs.se, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e6))
def test_compensation_identity_exact(seed, k, a):
    d = _small(seed)
    lhs = theta_at(rescale_outcome(d, k), Transform.arcsinh(), a)
    rhs = theta_at(d, Transform.arcsinh(), k * a)
    assert lhs.value == rhs.value


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-4, 1e4))
def test_shift_identity_estimates(seed, a):
    d = _small(seed)
    lhs = theta_at(d, Transform.log1p(a)).value
    rhs = theta_at(d, Transform.logc(1 / a)).value
    assert abs(lhs - rhs) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_monotone_divergence(seed):
    d = _small(seed)
    gamma = extensive_margin(d).value
    assume(gamma > 0)
    grid = 10.0 ** np.arange(0, 13)
    th = sensitivity_curve(d, Transform.arcsinh(), grid).theta
    assert (np.diff(th[-4:]) > 0).all()
    assert th[-1] > th[0] + gamma * 20


def test_covariate_engine_and_cluster_vcov():
    d = _small(5)
    a = theta_at(d, Transform.arcsinh(), 10.0, "ols_with_covariates", "cluster")
    b = theta_at(d, Transform.arcsinh(), 10.0, "ols_diff_means", "cluster")
    assert a.value != b.value and a.se > 0 and b.se > 0
    with pytest.raises(InputError):
        theta_at(d, Transform.arcsinh(), 1.0, "ridge")


def test_lognormal_slope_tracks_truth():
    d, m = lognormal_zeros(20000, 3)
    curve = sensitivity_curve(d, Transform.log1p(), np.logspace(4, 8, 5))
    assert abs(curve.slope() - m["extensive_margin"]) < 3 * curve.extensive_margin.se
