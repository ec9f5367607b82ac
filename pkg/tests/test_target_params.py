import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zeroscale import (BootstrapSpec, Dataset, ate_pct_means, ate_pct_poisson, calibrated_ate,
                       extensive_margin, median_pct, normalized_outcome_ate, rank_ate, rescale_outcome,
                       threshold_profile)
from zeroscale.errors import (EmptyReference, MonotonicityViolation, NonPositiveDenominator,
                              NoPositiveOutcomes, ZeroControlMean, ZeroControlMedian)
from zeroscale.target_params import quantile


def _arms(treated, control, **kw):
    y = np.concatenate([treated, control]).astype(float)
    D = np.concatenate([np.ones(len(treated)), np.zeros(len(control))])
    return Dataset(y, D, **kw)


def _random(seed, n=120, clusters=True):
    rng = np.random.default_rng(seed)
    D = (np.arange(n) % 2).astype(float)
    y = np.where(rng.random(n) < 0.5 + 0.2 * D, rng.lognormal(0.2 * D, 1.0, n), 0.0)
    return Dataset(y, D, cluster=np.arange(n) // 6 if clusters else None)


def test_ate_pct_examples():
    assert round(ate_pct_means(_arms([9.84, 0, 19.68], [8.85, 17.7, 0])).value, 4) == 0.1119
    assert ate_pct_means(_arms([1, 3], [2, 2])).value == 0
    assert ate_pct_means(_arms([0, 0], [5, 5])).value == -1.0
    with pytest.raises(ZeroControlMean):
        ate_pct_means(_arms([1, 2], [0, 0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["HC0", "cluster"]))
def test_ate_pct_means_matches_poisson(seed, vcov):
    d = _random(seed)
    if d.outcome[d.treatment == 0].sum() == 0 or d.outcome[d.treatment == 1].sum() == 0:
        return
    a, p = ate_pct_means(d, vcov), ate_pct_poisson(d, vcov=vcov)
    assert a.value == pytest.approx(p.value, abs=1e-10)
    assert a.se == pytest.approx(p.se, rel=1e-8)


def test_quantile_convention():
    assert quantile([1, 2, 3], 0.5) == 2
    assert quantile([0, 0, 1, 2], 0.5) == 0
    assert quantile([0, 0, 1, 2], 0.51) == 1
    assert quantile([3, 1], 1.0) == 3


def test_median_examples():
    assert median_pct(_arms([2, 4, 6], [1, 2, 3])).value == 1.0
    assert median_pct(_arms([1, 2, 3], [3, 2, 1])).value == 0.0
    # the left-continuous median of {0, 0, 1, 2} is 0
    with pytest.raises(ZeroControlMedian):
        median_pct(_arms([1, 1, 1, 1], [0, 0, 1, 2]))
    with pytest.raises(ZeroControlMedian):
        median_pct(_arms([1, 1, 1, 1], [0, 0, 0, 2]))


def test_median_bootstrap_se():
    rng = np.random.default_rng(1)
    d = _arms(rng.exponential(2.0, 200) + 0.1, rng.exponential(1.0, 200) + 0.1)
    r = median_pct(d, BootstrapSpec(draws=200, seed=3))
    assert math.isnan(median_pct(d).se)
    assert 0 < r.se < 1 and r.meta["bootstrap"]["draws"] == 200


def test_normalized_outcome():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    d = Dataset(np.array([2.0, 4.0, 3.0, 4.0]), [1, 1, 0, 0], covariates=x[:, None], covariate_names=("x",))
    assert normalized_outcome_ate(d, "x").value == pytest.approx(1.0, abs=1e-14)
    assert normalized_outcome_ate(d, 0).value == pytest.approx(1.0, abs=1e-14)
    bad = d.replace(covariates=np.array([[1.0], [0.0], [3.0], [4.0]]))
    with pytest.raises(NonPositiveDenominator):
        normalized_outcome_ate(bad, "x")


def test_normalized_outcome_joint_rescale_bit_identical():
    rng = np.random.default_rng(2)
    n = 60
    x = rng.exponential(size=n) + 0.5
    d = Dataset(rng.exponential(size=n) * (rng.random(n) < 0.6), (np.arange(n) % 2).astype(float),
                covariates=np.column_stack([x, rng.normal(size=n)]), covariate_names=("x", "w"))
    base = normalized_outcome_ate(d, "x", covariates=True)
    for a in (0.125, 8.0, 1024.0):
        s = d.replace(outcome=a * d.outcome, covariates=np.column_stack([a * x, d.covariates[:, 1]]))
        r = normalized_outcome_ate(s, "x", covariates=True)
        assert (r.value, r.se) == (base.value, base.se)


def test_rank_ate():
    rng = np.random.default_rng(3)
    d = _arms(rng.normal(1.0, 1, 500) ** 2 + 1, rng.normal(0.0, 1, 500) ** 2 + 0.5)
    r = rank_ate(d)
    assert r.value > 0 and -1 <= r.value <= 1
    same = _arms([1, 2, 3, 4], [1, 2, 3, 4])
    assert rank_ate(same).value == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(EmptyReference):
        rank_ate(same, reference=[])
    assert rank_ate(same, reference=[0.5, 2.5]).value == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_rank_invariant_to_increasing_maps(seed):
    d = _random(seed, clusters=False)
    base = rank_ate(d)
    for f in (np.sqrt, np.log1p, lambda v: v ** 3 + 2 * v):
        r = rank_ate(Dataset(f(d.outcome), d.treatment))
        assert (r.value, r.se) == (base.value, base.se)
    ref = np.array([0.0, 0.3, 1.0, 4.0])
    assert rank_ate(Dataset(np.sqrt(d.outcome), d.treatment), np.sqrt(ref)).value == rank_ate(d, ref).value


def test_threshold_profile_examples():
    d = _random(4)
    pos = d.outcome[d.outcome > 0]
    prof = threshold_profile(d, [pos.min() / 2, d.outcome.max() * 2])
    assert prof.values[0] == pytest.approx(extensive_margin(d).value, abs=1e-14)
    assert prof.values[1] == 0
    assert ((-1 <= prof.values) & (prof.values <= 1)).all()
    with pytest.raises(Exception):
        threshold_profile(d, [2.0, 1.0])


def _enumerated(p1, p0, support, copies=1):
    """Sample whose empirical arms equal the discrete laws exactly."""
    c1 = np.round(np.array(p1) * 1000 * copies).astype(int)
    c0 = np.round(np.array(p0) * 1000 * copies).astype(int)
    return _arms(np.repeat(support, c1), np.repeat(support, c0))


def test_threshold_profile_exact_population():
    support = np.array([0.0, 1.0, 2.0, 5.0])
    p1, p0 = [0.2, 0.3, 0.3, 0.2], [0.5, 0.2, 0.2, 0.1]
    d = _enumerated(p1, p0, support)
    prof = threshold_profile(d, [0.5, 1.0, 1.5, 2.0, 5.0])
    s1 = lambda y: sum(p for v, p in zip(support, p1) if v >= y)
    s0 = lambda y: sum(p for v, p in zip(support, p0) if v >= y)
    truth = [s1(y) - s0(y) for y in prof.thresholds]
    np.testing.assert_allclose(prof.values, truth, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 20), min_size=4, max_size=4), st.lists(st.integers(0, 20), min_size=4, max_size=4))
def test_monotone_profile_under_dominance(w0, shift):
    # build p1 from p0 by moving mass upward, which gives first-order dominance
    p0 = np.array(w0, float) / sum(w0)
    p1 = p0.copy()
    for k in range(3):
        move = p1[k] * (shift[k] / 20) * 0.5
        p1[k] -= move
        p1[k + 1] += move
    c1 = np.round(p1 * 4000).astype(int)
    c0 = np.round(p0 * 4000).astype(int)
    support = np.array([0.0, 1.0, 2.0, 3.0])
    cdf1, cdf0 = np.cumsum(c1) / c1.sum(), np.cumsum(c0) / c0.sum()
    if not (cdf1 <= cdf0 + 1e-15).all():
        return
    d = _arms(np.repeat(support, c1), np.repeat(support, c0))
    prof = threshold_profile(d, [0.5, 1.5, 2.5])
    assert (prof.values >= -1e-12).all()


def test_calibrated_examples():
    d = _random(5, clusters=False)
    y_min = d.outcome[d.outcome > 0].min()
    r = calibrated_ate(d, 1.0)
    assert r.meta == {"x": 1.0, "y_min": y_min}
    rng = np.random.default_rng(6)
    pos = Dataset(rng.exponential(size=50) + 1, (np.arange(50) % 2).astype(float))
    r = calibrated_ate(pos, 0.0)
    logs = np.log(pos.outcome / pos.outcome.min())
    assert r.value == pytest.approx(logs[pos.treatment == 1].mean() - logs[pos.treatment == 0].mean(), abs=1e-12)
    with pytest.raises(NoPositiveOutcomes):
        calibrated_ate(_arms([0, 0], [0, 0]), 1.0)


def test_calibrated_monotonicity_violation_from_transform():
    from zeroscale import Transform
    with pytest.raises(MonotonicityViolation):
        Transform.calibrated(1.0, y_min=2.0)(np.array([0.5]))


def test_calibrated_enumerated_population():
    support = np.array([0.0, 1.0, 4.0])
    p1, p0 = [0.3, 0.3, 0.4], [0.5, 0.3, 0.2]
    d = _enumerated(p1, p0, support)
    x = 0.5
    m = np.array([-x, 0.0, math.log(4.0)])
    truth = float(np.dot(p1, m) - np.dot(p0, m))
    assert calibrated_ate(d, x).value == pytest.approx(truth, abs=1e-12)


def test_calibrated_did():
    G = np.repeat([1.0, 1, 0, 0], 3)
    P = np.tile([0.0, 1.0], 6)
    y = np.array([1.0, 2, 0, 3, 1, 1, 2, 2, 0, 1, 4, 2])
    d = Dataset(y, G, post=P, group=G)
    r = calibrated_ate(d, 0.1, did=True)
    m = np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), -0.1)
    cell = lambda g, t: m[(G == g) & (P == t)].mean()
    assert r.value == pytest.approx((cell(1, 1) - cell(1, 0)) - (cell(0, 1) - cell(0, 0)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_scale_invariant_targets(seed, a):
    d = _random(seed)
    s = rescale_outcome(d, a)
    assert ate_pct_means(s).value == pytest.approx(ate_pct_means(d).value, abs=1e-12)
    try:
        base = median_pct(d).value
    except ZeroControlMedian:
        base = None
    if base is not None:
        assert median_pct(s).value == pytest.approx(base, abs=1e-12)
    assert rank_ate(s).value == rank_ate(d).value
    th = np.array([0.1, 1.0, 3.0])
    np.testing.assert_allclose(threshold_profile(s, a * th).values, threshold_profile(d, th).values, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(-30, 30), st.floats(0, 5))
def test_calibrated_invariant_with_normalisation(seed, k, x):
    d = _random(seed, clusters=False)
    a = 2.0 ** k
    r1, r2 = calibrated_ate(d, x), calibrated_ate(rescale_outcome(d, a), x)
    assert (r1.value, r1.se) == (r2.value, r2.se)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.floats(0, 5))
def test_calibrated_invariant_generic_scale(seed, a, x):
    d = _random(seed, clusters=False)
    r1, r2 = calibrated_ate(d, x), calibrated_ate(rescale_outcome(d, a), x)
    assert r2.value == pytest.approx(r1.value, abs=1e-12)


def test_calibrated_fixed_y_min_not_invariant():
    from zeroscale import Transform, theta_at
    d = _random(7, clusters=False)
    d = d.replace(outcome=d.outcome + (d.outcome > 0))
    t = Transform.calibrated(1.0, y_min=1.0)
    assert abs(theta_at(d, t).value - theta_at(rescale_outcome(d, 10.0), t).value) > 1e-3
