"""Trimming bounds on the intensive-margin effect.

Monotonicity runs in the direction of the estimated extensive margin: when
the treated arm has the larger positive share, every control-positive unit
is assumed positive under treatment too, so the treated positives are a
mixture of always-positive units and units moved off zero, and the bounds
trim the treated positives.  The mirror case trims the control positives.

The IV versions work with complier CDFs recovered by two-stage least
squares: the coefficient on D with outcome D*1[Y <= y] is the complier CDF
of Y(1) at y, and with outcome (D - 1)*1[Y <= y] the complier CDF of Y(0).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset, require_binary
from .errors import (DegenerateShares, InputError, InvalidC, MissingColumn, NoAlwaysTakers,
                     NoPositiveOutcomes, SharesOutOfSimplex, WeakFirstStage, ZeroComplierControlMean,
                     ZeroTrimDenominator)
from .inference import BootstrapSpec, cluster_bootstrap, replicate_rng
from .regression import design, ols_fit, tsls_weights
from .results import EstimateResult

SCALES = ("log", "levels")
MAX_GRID = 10000
MC_DRAWS = 100000
MC_SEED = 20240101


@dataclass
class BoundsResult:
    lower: float
    upper: float
    se_lower: float
    se_upper: float
    trim_fraction: float
    direction: str
    outcome_scale: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower, "upper": self.upper,
            "se_lower": self.se_lower, "se_upper": self.se_upper,
            "trim_fraction": self.trim_fraction, "direction": self.direction,
            "outcome_scale": self.outcome_scale, **self.meta,
        }


def _m(scale: str):
    if scale == "log":
        return np.log
    if scale == "levels":
        return lambda v: np.asarray(v, dtype=float)
    raise InputError(f"outcome scale must be one of {SCALES}, got {scale!r}")


def trimmed_mean(values, keep: float, side: str) -> float:
    """Mean of the lowest (``side="low"``) or highest ``keep`` units of mass.

    Each value carries unit mass; the cutoff value contributes the
    fractional mass needed to make the retained total exactly ``keep``.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if side == "high":
        v = v[::-1]
    k = v.size
    if not 0 < keep <= k:
        raise ZeroTrimDenominator(f"retained mass {keep} outside (0, {k}]")
    upto = np.arange(1, k + 1, dtype=float)
    w = np.clip(np.minimum(upto, keep) - (upto - 1.0), 0.0, 1.0)
    return float(np.dot(w, v) / keep)


def _positive_parts(d: Dataset):
    D = require_binary(d.treatment, "treatment")
    t = D == 1
    if not t.any() or t.all():
        raise InputError("both treatment arms must be non-empty")
    y = d.outcome
    y1, y0 = y[t], y[~t]
    pos1, pos0 = y1[y1 > 0], y0[y0 > 0]
    q1, q0 = pos1.size / y1.size, pos0.size / y0.size
    return pos1, pos0, q1, q0


def lee_bounds(d: Dataset, scale: str = "log",
               bootstrap: Optional[BootstrapSpec] = None) -> BoundsResult:
    """Trimming bounds on E[m(Y(1)) - m(Y(0)) | both positive].

    ``scale="log"`` uses m = log, ``"levels"`` the identity.  The bootstrap,
    when requested, re-derives the trimming direction on each resample.
    """
    m = _m(scale)
    pos1, pos0, q1, q0 = _positive_parts(d)
    if max(q1, q0) == 0:
        raise ZeroTrimDenominator("no positive outcomes in either arm")
    if pos1.size == 0 or pos0.size == 0:
        raise NoPositiveOutcomes("both arms need positive outcomes")
    if q1 >= q0:
        direction = "treated_retains"
        p = (q1 - q0) / q1
        keep = pos1.size * (q0 / q1)
        base = float(np.mean(m(pos0)))
        lower = trimmed_mean(m(pos1), keep, "low") - base
        upper = trimmed_mean(m(pos1), keep, "high") - base
    else:
        direction = "control_retains"
        p = (q0 - q1) / q0
        keep = pos0.size * (q1 / q0)
        base = float(np.mean(m(pos1)))
        lower = base - trimmed_mean(m(pos0), keep, "high")
        upper = base - trimmed_mean(m(pos0), keep, "low")
    res = BoundsResult(lower, upper, math.nan, math.nan, p, direction, scale,
                       {"q_treated": q1, "q_control": q0})
    if bootstrap is not None:
        boot = cluster_bootstrap(d, lambda s: _bounds_pair(lee_bounds(s, scale)), bootstrap)
        res.se_lower, res.se_upper = float(boot.se[0]), float(boot.se[1])
        res.meta["bootstrap"] = {"lower": boot.summary(0), "upper": boot.summary(1)}
    return res


def _bounds_pair(b: BoundsResult):
    return (b.lower, b.upper)


def _selection_value(d: Dataset, c: float) -> tuple[float, str, float]:
    pos1, pos0, q1, q0 = _positive_parts(d)
    if q1 == 0 or q0 == 0:
        raise DegenerateShares("the positive share is zero in one arm")
    # theta + (1 - c)(1 - theta) = (q1 - c(q1 - q0)) / q1; the right side
    # avoids rounding in 1 - theta
    if q1 >= q0:
        value = pos1.mean() * q1 / (q1 - c * (q1 - q0)) - pos0.mean()
        return float(value), "treated_retains", q0 / q1
    # mirror case: the control positives mix always-positive units and
    # units pushed to zero by treatment
    value = pos1.mean() - pos0.mean() * q0 / (q0 - c * (q0 - q1))
    return float(value), "control_retains", q1 / q0


def selection_point_estimate(d: Dataset, c: float,
                             bootstrap: Optional[BootstrapSpec] = None) -> EstimateResult:
    """Intensive-margin effect in levels when the units moved off zero have
    mean outcome c times that of the always-positive units.

    With theta = q0/q1 the always-positive treated mean is
    E[Y | D=1, Y>0] / (theta + (1 - c)(1 - theta)).
    """
    c = float(c)
    if not 0 <= c < 1:
        raise InvalidC(f"c must lie in [0, 1), got {c!r}")
    value, direction, theta = _selection_value(d, c)
    res = EstimateResult(value, math.nan, d.row_count, "selection_point_estimate", "identity",
                         {"c": c, "theta": theta, "direction": direction})
    if bootstrap is not None:
        boot = cluster_bootstrap(d, lambda s: _selection_value(s, c)[0], bootstrap)
        res.se = float(boot.se[0])
        res.meta["bootstrap"] = boot.summary()
    return res


# -- instrument compliers ------------------------------------------------------

@dataclass
class ComplierCdfs:
    """Complier CDFs on a grid of outcome values.

    ``F1``/``F0`` are clamped to [0, 1], made non-decreasing by a running
    maximum and end at 1; ``F1_raw``/``F0_raw`` are the TSLS estimates.
    ``shares`` maps ``"AT"``, ``"NT"``, ``"C"`` to outcome-type shares among
    instrument compliers, oriented by ``direction``.
    """

    grid: np.ndarray
    F1: np.ndarray
    F0: np.ndarray
    shares: dict
    direction: str
    F1_raw: np.ndarray = field(repr=False, default=None)
    F0_raw: np.ndarray = field(repr=False, default=None)
    first_stage: dict = field(default_factory=dict)

    def at(self, which: int, y: float) -> float:
        F = self.F1 if which == 1 else self.F0
        k = np.searchsorted(self.grid, y, side="right")
        return 0.0 if k == 0 else float(F[k - 1])


def _thin(values: np.ndarray, cap: int) -> np.ndarray:
    if values.size <= cap:
        return values
    idx = np.unique(np.round(np.linspace(0, values.size - 1, cap)).astype(int))
    return values[idx]


def _monotone(F):
    F = np.maximum.accumulate(np.clip(F, 0.0, 1.0))
    F[-1] = 1.0
    return F


def complier_cdfs(d: Dataset, covariates: bool = False, max_grid: int = MAX_GRID,
                  warn: bool = True) -> ComplierCdfs:
    """Complier CDFs of Y(1) and Y(0) from one TSLS factorization.

    The TSLS coefficient is linear in the outcome, so every grid point is a
    cumulative sum of the same row weights.  The grid is all distinct
    outcome values, thinned uniformly (keeping both ends) above ``max_grid``.
    """
    if d.instrument is None:
        raise MissingColumn("instrument")
    D = require_binary(d.treatment, "treatment")
    Z = d.instrument
    cov = d.covariates if covariates else None
    X_exog = design(cov, n=d.row_count) if cov is not None else np.ones((d.row_count, 1))

    fs = ols_fit(design(Z, cov, n=d.row_count), D)
    fs_t = float(fs.tstats[1])
    if warn and not abs(fs_t) >= 2:
        warnings.warn(f"weak first stage: |t| = {abs(fs_t):.3g} < 2", WeakFirstStage, stacklevel=2)

    w = tsls_weights(X_exog, D, Z)
    y = d.outcome
    order = np.argsort(y, kind="stable")
    ys = y[order]
    c1 = np.cumsum((w * D)[order])
    c0 = np.cumsum((w * (D - 1.0))[order])
    grid = _thin(np.unique(y), max_grid)
    k = np.searchsorted(ys, grid, side="right") - 1
    F1_raw, F0_raw = c1[k], c0[k]
    F1, F0 = _monotone(F1_raw), _monotone(F0_raw)

    def at_zero(F):
        return float(F[0]) if grid[0] == 0 else 0.0

    raw1, raw0 = (float(F1_raw[0]), float(F0_raw[0])) if grid[0] == 0 else (0.0, 0.0)
    if warn and not (0 <= raw1 <= 1 and 0 <= raw0 <= 1):
        warnings.warn("estimated complier zero-shares fall outside [0, 1]; projected",
                      SharesOutOfSimplex, stacklevel=2)
    z1, z0 = at_zero(F1), at_zero(F0)
    if z0 >= z1:
        direction = "treated_retains"
        shares = {"NT": z1, "C": z0 - z1, "AT": 1.0 - z0}
    else:
        direction = "control_retains"
        shares = {"NT": z0, "C": z1 - z0, "AT": 1.0 - z1}
    return ComplierCdfs(grid, F1, F0, shares, direction, F1_raw, F0_raw,
                        {"coef": float(fs.coefficients[1]), "se": float(fs.se[1]), "t": fs_t,
                         "F": fs_t ** 2})


def _interval_mean(grid, F, lo, hi, m) -> float:
    """Exact mean of m(F^{-1}(U)) for U uniform on [lo, hi]."""
    left = np.concatenate(([0.0], F[:-1]))
    length = np.clip(np.minimum(F, hi) - np.maximum(left, lo), 0.0, None)
    keep = length > 0
    return float(np.dot(length[keep], m(grid[keep])) / (hi - lo))


def _mc_values(grid, F, lo, hi, m, v):
    u = lo + (hi - lo) * v
    k = np.minimum(np.searchsorted(F, u, side="left"), grid.size - 1)
    return m(grid[k])


def iv_lee_bounds(cdfs: ComplierCdfs, scale: str = "log", mode: str = "quadrature",
                  draws: int = MC_DRAWS, seed: int = MC_SEED) -> BoundsResult:
    """Trimming bounds among instrument compliers from the inverse CDFs.

    ``mode="quadrature"`` integrates the step inverse CDFs exactly;
    ``mode="monte_carlo"`` averages over ``draws`` uniforms and reports the
    simulation standard errors in ``meta["mc_se_lower"]`` and
    ``meta["mc_se_upper"]``.
    """
    m = _m(scale)
    if mode not in ("quadrature", "monte_carlo"):
        raise InputError(f"unknown mode {mode!r}")
    sh = cdfs.shares
    NT, C, AT = sh["NT"], sh["C"], sh["AT"]
    if not AT > 0:
        raise NoAlwaysTakers("no always-positive compliers: the trimming interval is empty")
    if cdfs.direction == "treated_retains":
        F_trim, F_base = cdfs.F1, cdfs.F0
    else:
        F_trim, F_base = cdfs.F0, cdfs.F1
    g = cdfs.grid
    lo_iv, hi_iv, base_iv = (NT, NT + AT), (1.0 - AT, 1.0), (NT + C, 1.0)
    meta = {"shares": dict(sh), "mode": mode}
    if mode == "quadrature":
        t_low = _interval_mean(g, F_trim, *lo_iv, m)
        t_high = _interval_mean(g, F_trim, *hi_iv, m)
        base = _interval_mean(g, F_base, *base_iv, m)
    else:
        # V in (0, 1] keeps U off the left endpoint, where the inverse may be zero
        v = 1.0 - replicate_rng(seed, 0).random(int(draws))
        low = _mc_values(g, F_trim, *lo_iv, m, v)
        high = _mc_values(g, F_trim, *hi_iv, m, v)
        base_v = _mc_values(g, F_base, *base_iv, m, v)
        t_low, t_high, base = float(low.mean()), float(high.mean()), float(base_v.mean())
        root = math.sqrt(v.size)
        # common draws: the simulation error of each bound is that of the
        # per-draw difference
        meta.update({"draws": int(draws), "seed": int(seed),
                     "mc_se_lower": float(np.std(high - base_v if cdfs.direction == "control_retains"
                                                 else low - base_v, ddof=1) / root),
                     "mc_se_upper": float(np.std(low - base_v if cdfs.direction == "control_retains"
                                                 else high - base_v, ddof=1) / root)})
    if cdfs.direction == "treated_retains":
        lower, upper = t_low - base, t_high - base
    else:
        lower, upper = base - t_high, base - t_low
    p = C / (C + AT)
    return BoundsResult(lower, upper, math.nan, math.nan, p, cdfs.direction, scale, meta)


def iv_lee_bounds_data(d: Dataset, scale: str = "log", mode: str = "quadrature",
                       draws: int = MC_DRAWS, seed: int = MC_SEED, covariates: bool = False,
                       bootstrap: Optional[BootstrapSpec] = None) -> BoundsResult:
    """:func:`complier_cdfs` followed by :func:`iv_lee_bounds`, with an
    optional clustered bootstrap that re-derives the direction per draw."""
    def stat(s):
        c = complier_cdfs(s, covariates, warn=False)
        return _bounds_pair(iv_lee_bounds(c, scale, mode, draws, seed))

    res = iv_lee_bounds(complier_cdfs(d, covariates), scale, mode, draws, seed)
    if bootstrap is not None:
        boot = cluster_bootstrap(d, stat, bootstrap)
        res.se_lower, res.se_upper = float(boot.se[0]), float(boot.se[1])
        res.meta["bootstrap"] = {"lower": boot.summary(0), "upper": boot.summary(1)}
    return res


def _iv_pct(d: Dataset, covariates: bool):
    if d.instrument is None:
        raise MissingColumn("instrument")
    D = require_binary(d.treatment, "treatment")
    cov = d.covariates if covariates else None
    X_exog = design(cov, n=d.row_count) if cov is not None else np.ones((d.row_count, 1))
    w = tsls_weights(X_exog, D, d.instrument)
    late = float(w @ d.outcome)
    base = float(w @ ((D - 1.0) * d.outcome))
    if not base > 0:
        raise ZeroComplierControlMean("complier control mean is not positive")
    return late / base, late, base


def iv_complier_ate_pct(d: Dataset, covariates: bool = False,
                        bootstrap: Optional[BootstrapSpec] = None) -> EstimateResult:
    """LATE in levels divided by the complier control mean, both by TSLS.

    The complier control mean is the TSLS coefficient with outcome
    (D - 1) * Y.
    """
    value, late, base = _iv_pct(d, covariates)
    res = EstimateResult(value, math.nan, d.row_count, "iv_complier_ate_pct", "identity",
                         {"late": late, "complier_control_mean": base})
    if bootstrap is not None:
        boot = cluster_bootstrap(d, lambda s: _iv_pct(s, covariates)[0], bootstrap)
        res.se = float(boot.se[0])
        res.meta["bootstrap"] = boot.summary()
    return res
