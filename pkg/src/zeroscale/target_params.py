"""Scale-invariant and explicitly calibrated target parameters.

Estimators here return :class:`EstimateResult`.  Those whose standard error
has no closed form (medians, and any estimator asked for one) accept a
:class:`BootstrapSpec`; without one the standard error is NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .dataset import Dataset, clusters_for, min_positive_outcome, require_binary
from .errors import InputError, NonPositiveDenominator, ZeroControlMean, ZeroControlMedian
from .inference import BootstrapSpec, cluster_bootstrap
from .poisson import did_cells
from .regression import _vcov_args, design, ols_fit
from .results import EstimateResult
from .transforms import Transform, apply_array


def _arms(d: Dataset):
    D = require_binary(d.treatment, "treatment")
    t = D == 1
    if not t.any() or t.all():
        raise InputError("both treatment arms must be non-empty")
    return t


def quantile(x, u: float) -> float:
    """Left-continuous inverse of the empirical CDF: inf{y : F(y) >= u}."""
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        raise InputError("quantile of an empty sample")
    if not 0 < u <= 1:
        raise InputError("u must lie in (0, 1]")
    k = max(int(math.ceil(u * x.size - 1e-12)), 1)
    return float(x[k - 1])


def _ols_effect(d: Dataset, y, covariates: bool, vcov: str, estimator: str, tag: str = "",
                meta=None) -> EstimateResult:
    D = require_binary(d.treatment, "treatment")
    X = design(D, d.covariates if covariates else None, n=d.row_count)
    fit = ols_fit(X, y, vcov, clusters_for(d, vcov))
    return EstimateResult(float(fit.coefficients[1]), float(fit.se[1]), d.row_count,
                          estimator, tag, dict(meta or {}))


def _with_bootstrap(res: EstimateResult, d: Dataset, stat, bootstrap: Optional[BootstrapSpec]):
    if bootstrap is None:
        return res
    boot = cluster_bootstrap(d, stat, bootstrap)
    res.se = float(boot.se[0])
    res.meta["bootstrap"] = boot.summary()
    return res


def ate_pct_means(d: Dataset, vcov: str = "HC0") -> EstimateResult:
    """(mean1 - mean0) / mean0 with a delta-method standard error.

    The variance sums squared influence-function terms (within clusters
    when ``vcov == "cluster"``), which reproduces the Poisson sandwich on
    the saturated design.
    """
    t = _arms(d)
    y = d.outcome
    n1, n0 = int(t.sum()), int((~t).sum())
    m1, m0 = float(y[t].mean()), float(y[~t].mean())
    if not m0 > 0:
        raise ZeroControlMean("control mean is zero")
    psi = np.where(t, (y - m1) / n1 / m0, -(m1 / m0 ** 2) * (y - m0) / n0)
    cl = _vcov_args(vcov, clusters_for(d, vcov))
    if cl is not None:
        psi = np.bincount(cl, weights=psi)
    se = float(math.sqrt(np.sum(psi ** 2)))
    return EstimateResult(m1 / m0 - 1.0, se, d.row_count, "ate_pct_means", "identity",
                          {"mean_treated": m1, "mean_control": m0})


def _median_pct_value(d: Dataset) -> float:
    t = _arms(d)
    med0 = quantile(d.outcome[~t], 0.5)
    if not med0 > 0:
        raise ZeroControlMedian("control median is zero")
    return (quantile(d.outcome[t], 0.5) - med0) / med0


def median_pct(d: Dataset, bootstrap: Optional[BootstrapSpec] = None) -> EstimateResult:
    """(median1 - median0) / median0 using the left-continuous median."""
    value = _median_pct_value(d)
    t = _arms(d)
    res = EstimateResult(value, math.nan, d.row_count, "median_pct", "identity",
                         {"median_treated": quantile(d.outcome[t], 0.5),
                          "median_control": quantile(d.outcome[~t], 0.5)})
    return _with_bootstrap(res, d, _median_pct_value, bootstrap)


def normalized_outcome_ate(d: Dataset, denominator: Union[int, str], covariates: bool = False,
                           vcov: str = "HC0") -> EstimateResult:
    """ATE of Y / X for a strictly positive covariate X.

    With ``covariates=True`` the remaining covariates enter the regression;
    the denominator column itself is excluded.
    """
    x = d.covariate(denominator)
    bad = ~(x > 0)
    if bad.any():
        raise NonPositiveDenominator(
            f"denominator {denominator!r} is not positive at row {int(np.flatnonzero(bad)[0])}"
        )
    j = denominator if isinstance(denominator, int) else d.covariate_names.index(denominator)
    other = np.delete(d.covariates, j, axis=1) if covariates else None
    D = require_binary(d.treatment, "treatment")
    X = design(D, other, n=d.row_count)
    fit = ols_fit(X, d.outcome / x, vcov, clusters_for(d, vcov))
    return EstimateResult(float(fit.coefficients[1]), float(fit.se[1]), d.row_count,
                          "normalized_outcome_ate", f"ratio:{d.covariate_names[j]}")


def rank_ate(d: Dataset, reference: Union[str, Sequence[float]] = "pooled_control",
             vcov: str = "HC0") -> EstimateResult:
    """ATE of F_ref(Y), the right-continuous empirical CDF of a reference sample.

    ``reference="pooled_control"`` uses the control-arm outcomes.
    """
    if isinstance(reference, str):
        if reference != "pooled_control":
            raise InputError(f"unknown rank reference {reference!r}")
        t = _arms(d)
        ref = d.outcome[~t]
        label = "pooled_control"
    else:
        ref = np.asarray(reference, dtype=float)
        label = "supplied"
    tr = Transform.rank(ref)
    return _ols_effect(d, apply_array(tr, d.outcome), False, vcov, "rank_ate", "rank",
                       {"reference": label})


@dataclass
class ThresholdProfile:
    thresholds: np.ndarray
    effects: list

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.effects])


def threshold_profile(d: Dataset, thresholds, covariates: bool = False,
                      vcov: str = "HC0") -> ThresholdProfile:
    """Effect on P(Y >= y) at every threshold y."""
    th = np.asarray(thresholds, dtype=float).ravel()
    if th.size == 0:
        raise InputError("no thresholds supplied")
    if (th < 0).any() or not np.isfinite(th).all():
        raise InputError("thresholds must be finite and non-negative")
    if th.size > 1 and not (np.diff(th) > 0).all():
        raise InputError("thresholds must be strictly increasing")
    effects = []
    for level in th:
        tr = Transform.at_least(level)
        effects.append(_ols_effect(d, apply_array(tr, d.outcome), covariates, vcov,
                                   "threshold", tr.tag, {"threshold": float(level)}))
    return ThresholdProfile(th, effects)


def calibrated_ate(d: Dataset, x: float, did: bool = False, covariates: bool = False,
                   vcov: str = "HC0") -> EstimateResult:
    """ATE (or DiD interaction) of log(Y / y_min) with zero mapped to -x.

    ``y_min`` is the smallest positive outcome in ``d`` and is recorded in
    the result metadata.
    """
    y_min = min_positive_outcome(d)
    tr = Transform.calibrated(x, y_min=y_min)
    m = apply_array(tr, d.outcome)
    meta = {"x": float(x), "y_min": y_min}
    if not did:
        return _ols_effect(d, m, covariates, vcov, "calibrated_ate", tr.tag, meta)
    did_cells(d)
    G, P = d.group, d.post
    X = design(G * P, G, P, d.covariates if covariates else None, n=d.row_count)
    fit = ols_fit(X, m, vcov, clusters_for(d, vcov))
    return EstimateResult(float(fit.coefficients[1]), float(fit.se[1]), d.row_count,
                          "calibrated_did", tr.tag, meta)
