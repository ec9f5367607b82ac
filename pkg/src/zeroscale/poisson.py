"""Poisson quasi-maximum likelihood and proportional effects.

The exponential-mean model E[Y | X] = exp(X'b) is fit by Newton/IRLS with
step-halving, so the deviance never increases between iterations.  Under
random assignment exp(b_D) - 1 estimates E[Y(1)] / E[Y(0)] - 1; in the
interacted 2x2 design it estimates the ATT as a share of the counterfactual
mean under ratio parallel trends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import Dataset, clusters_for, require_binary
from .errors import (AllZeroOutcome, CollinearPeriods, EmptyCell, InputError, NoConvergence,
                     RankDeficient, Separation, ZeroCellMean)
from .regression import _qr, _sandwich, _vcov_args, check_rank, design
from .results import PropEffect

MAX_ITER = 100
DEV_TOL = 1e-10
SCORE_TOL = 1e-8
# deviance is quadratic at the optimum, so a 1e-10 relative change still
# leaves ~1e-5 coefficient error; a small Newton step is required as well
STEP_TOL = 1e-9
POLISH_TOL = 1e-6
INIT_EPS = 1e-8
DIVERGENCE_BOUND = 30.0


@dataclass
class PoissonFit:
    coefficients: np.ndarray
    vcov: np.ndarray
    deviance_trace: list
    converged: bool
    iterations: int
    n: int
    cluster_count: int = 0
    fitted: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def tstats(self):
        return self.coefficients / self.se

    def prop_effect(self, j: int, label: str = "") -> PropEffect:
        value, se = delta_exp_minus_one(float(self.coefficients[j]), float(self.se[j]))
        return PropEffect(value, se, j, float(self.coefficients[j]), float(self.se[j]), label)


def delta_exp_minus_one(beta: float, se_beta: float) -> tuple[float, float]:
    """(exp(b) - 1, exp(b) * se): the delta method for a proportional effect."""
    if se_beta < 0:
        raise InputError("standard error must be non-negative")
    return math.expm1(beta), math.exp(beta) * se_beta


def poisson_deviance(y, mu) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def poisson_fit(X, y, vcov: str = "HC0", clusters=None, *, max_iter=MAX_ITER,
                cluster_correction=False) -> PoissonFit:
    """Poisson QMLE of ``y`` on ``X`` with a sandwich covariance.

    Iteration starts from intercept log(mean(y) + 1e-8) and stops when the
    relative deviance change falls below 1e-10 on two consecutive steps or
    the score sup-norm falls below 1e-8 * n, and in either case the last
    Newton step is below 1e-9 * (1 + max|b|).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, J = X.shape
    if y.shape[0] != n:
        raise InputError("X and y lengths differ")
    if (y < 0).any() or not np.isfinite(y).all():
        raise InputError("Poisson outcomes must be finite and non-negative")
    if not y.any():
        raise AllZeroOutcome("all outcomes are zero")
    check_rank(X)
    cl = _vcov_args(vcov, clusters)

    # the intercept absorbs the units of y; the divergence guard is applied
    # relative to it
    offset = math.log(y.mean())
    beta = np.zeros(J)
    beta[0] = math.log(y.mean() + INIT_EPS)
    eta = X @ beta
    mu = np.exp(eta)
    dev = poisson_deviance(y, mu)
    trace = [dev]
    converged = False
    small_steps = 0
    it = 0
    for it in range(1, max_iter + 1):
        w = np.sqrt(mu)
        Q, R = _qr(X * w[:, None])
        step = solve_triangular(R, Q.T @ ((y - mu) / w))
        score_now = np.max(np.abs(X.T @ (y - mu)))
        # below this step size the deviance decrease is under its rounding
        # error, so a full Newton step is accepted on a falling score instead
        polish = np.max(np.abs(step)) < POLISH_TOL * (1.0 + np.max(np.abs(beta)))
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            eta_c = X @ cand
            if np.all(eta_c < 700):
                mu_c = np.exp(eta_c)
                dev_c = poisson_deviance(y, mu_c)
                if dev_c <= dev:
                    break
                if polish and np.max(np.abs(X.T @ (y - mu_c))) < score_now:
                    break
            t *= 0.5
        else:
            # no decrease possible at machine precision: stationary point
            cand, mu_c, dev_c = beta, mu, dev
        beta, mu = cand, mu_c
        shifted = beta.copy()
        shifted[0] -= offset
        if np.any(np.abs(shifted) > DIVERGENCE_BOUND):
            raise Separation(
                "coefficients diverged (|b| > 30): a regressor perfectly predicts zero outcomes"
            )
        rel = abs(dev - dev_c) / max(abs(dev_c), 1e-300) if dev_c > 0 else abs(dev - dev_c)
        dev = dev_c
        trace.append(dev)
        score = np.max(np.abs(X.T @ (y - mu)))
        small_steps = small_steps + 1 if rel < DEV_TOL else 0
        step_small = np.max(np.abs(t * step)) < STEP_TOL * (1.0 + np.max(np.abs(shifted)))
        if step_small and (score < SCORE_TOL * n or small_steps >= 2):
            converged = True
            break
    if not converged:
        raise NoConvergence(f"Poisson QMLE did not converge in {max_iter} iterations")

    # bread (X'WX)^{-1}, meat sum x x' (y - mu)^2 in the weighted basis
    w = np.sqrt(mu)
    Q, R = _qr(X * w[:, None])
    V, G = _sandwich(R, Q, (y - mu) / w, cl, False, cluster_correction)
    return PoissonFit(beta, V, trace, converged, it, n, G, fitted=mu)


def ate_pct_poisson(d: Dataset, covariates: bool = False, vcov: str = "HC0") -> PropEffect:
    """exp(b1) - 1 from Y = exp(b0 + b1 D [+ X'g]) U."""
    D = require_binary(d.treatment, "treatment")
    X = design(D, d.covariates if covariates else None, n=d.row_count)
    fit = poisson_fit(X, d.outcome, vcov, clusters_for(d, vcov))
    return fit.prop_effect(1, "treatment")


def did_cells(d: Dataset) -> dict:
    """Outcome means by (group, post) cell; keys are (g, t) tuples."""
    G = require_binary(d.group, "group")
    P = require_binary(d.post, "post")
    out = {}
    for g in (1, 0):
        for t in (0, 1):
            mask = (G == g) & (P == t)
            if not mask.any():
                raise EmptyCell(f"no rows with group={g}, post={t}")
            out[(g, t)] = float(d.outcome[mask].mean())
    return out


def att_pct_did(d: Dataset, covariates: bool = False, vcov: str = "HC0") -> PropEffect:
    """ATT as a share of the counterfactual mean under ratio parallel trends.

    Fits Y = exp(b0 + b1 G*Post + b2 G + b3 Post [+ X'g]) e; without
    covariates exp(b1) is the ratio of the treated and control
    post/pre mean ratios.
    """
    cells = did_cells(d)
    for key, m in cells.items():
        if not m > 0:
            raise ZeroCellMean(f"cell group={key[0]}, post={key[1]} has zero mean outcome")
    G, P = d.group, d.post
    X = design(G * P, G, P, d.covariates if covariates else None, n=d.row_count)
    fit = poisson_fit(X, d.outcome, vcov, clusters_for(d, vcov))
    return fit.prop_effect(1, "group x post")


def poisson_event_study(d: Dataset, relative_time, reference_period: int = -1,
                        vcov: str = "HC0") -> list[PropEffect]:
    """Exponentiated event-study coefficients exp(b_r) - 1, r != reference.

    Period fixed effects enter as indicators for every relative time except
    the first; the group indicator enters once; the reference period's
    interaction is omitted.
    """
    G = require_binary(d.group, "group")
    rt = np.asarray(relative_time)
    if rt.shape[0] != d.row_count:
        raise InputError("relative_time length does not match the dataset")
    periods = np.unique(rt)
    if reference_period not in periods:
        raise InputError(f"reference period {reference_period} not observed")
    fe = [(rt == p).astype(float) for p in periods[1:]]
    event = [p for p in periods if p != reference_period]
    inter = [G * (rt == p) for p in event]
    X = design(*inter, G, *fe, n=d.row_count)
    try:
        check_rank(X)
    except RankDeficient as exc:
        raise CollinearPeriods(f"event-study design is collinear: {exc}") from None
    fit = poisson_fit(X, d.outcome, vcov, clusters_for(d, vcov))
    return [fit.prop_effect(1 + k, f"r={int(p) if float(p).is_integer() else p}")
            for k, p in enumerate(event)]
