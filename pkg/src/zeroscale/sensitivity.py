"""Scale sensitivity of transformed-outcome treatment effects.

For a log-like map m, the ATE of m(a*Y) grows like the extensive-margin
effect times log(a).  This module evaluates the estimated effect over a grid
of scalings, the indicator regression that estimates the slope, the
corresponding approximation column, and a root finder that returns a scale
delivering any requested effect magnitude.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import Dataset, clusters_for, require_binary
from .errors import BracketNotFound, InputError, NoExtensiveMargin
from .regression import _qr, _sandwich, _vcov_args, check_rank, design
from .results import EstimateResult
from .transforms import Transform, apply_array

ENGINES = ("ols_diff_means", "ols_with_covariates")
DEFAULT_GRID = np.logspace(-4, 8, 25)
A_MIN, A_MAX = 1e-300, 1e300
BISECT_TOL = 1e-6
BISECT_MAX = 200
GAMMA_ZERO = 1e-12


class _Engine:
    """One QR factorization of the design, reused across outcome vectors."""

    def __init__(self, d: Dataset, engine: str, vcov: str):
        if engine not in ENGINES:
            raise InputError(f"unknown engine {engine!r}; expected one of {ENGINES}")
        D = require_binary(d.treatment, "treatment")
        covs = d.covariates if engine == "ols_with_covariates" else None
        self.X = design(D, covs, n=d.row_count)
        check_rank(self.X)
        self.clusters = _vcov_args(vcov, clusters_for(d, vcov))
        self.Q, self.R = _qr(self.X)
        self.d = d
        self.engine = engine

    def fit(self, y: np.ndarray) -> tuple[float, float]:
        beta = solve_triangular(self.R, self.Q.T @ y)
        e = y - self.X @ beta
        V, _ = _sandwich(self.R, self.Q, e, self.clusters, False, False)
        return float(beta[1]), float(math.sqrt(max(V[1, 1], 0.0)))

    def theta(self, t: Transform, a: float) -> EstimateResult:
        a = float(a)
        if not (a > 0 and math.isfinite(a)):
            raise InputError(f"scale must be positive and finite, got {a!r}")
        tt = t.with_scale(t.scale * a)
        value, se = self.fit(apply_array(tt, self.d.outcome))
        return EstimateResult(value, se, self.d.row_count, self.engine, tt.tag, {"a": a})


def theta_at(d: Dataset, t: Transform, a: float = 1.0, engine: str = "ols_diff_means",
             vcov: str = "HC0") -> EstimateResult:
    """Estimated ATE of m(a*Y) from the coefficient on D.

    ``a`` multiplies any scale already carried by ``t``.
    """
    return _Engine(d, engine, vcov).theta(t, a)


def extensive_margin(d: Dataset, engine: str = "ols_diff_means", vcov: str = "HC0") -> EstimateResult:
    """Effect on P(Y > 0): the regression of 1[Y > 0] on D."""
    res = _Engine(d, engine, vcov).theta(Transform.indicator(), 1.0)
    res.estimator = f"{engine}:extensive_margin"
    return res


@dataclass
class SensitivityCurve:
    grid: np.ndarray
    theta: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    extensive_margin: EstimateResult
    approx: np.ndarray
    transform_kind: str
    anchor: float
    engine: str = "ols_diff_means"
    meta: dict = field(default_factory=dict)

    def slope(self, lo: float = -math.inf, hi: float = math.inf) -> float:
        """Least-squares slope of theta on log(a) over grid points in [lo, hi]."""
        keep = (self.grid >= lo) & (self.grid <= hi)
        if keep.sum() < 2:
            raise InputError("slope needs at least two grid points in range")
        x = np.log(self.grid[keep])
        return float(np.polyfit(x, self.theta[keep], 1)[0])

    def rows(self):
        for i in range(self.grid.size):
            yield (float(self.grid[i]), float(self.theta[i]), float(self.se[i]),
                   float(self.tstat[i]), float(self.approx[i]))

    def to_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "theta", "se", "tstat", "approx"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])

    def summary(self) -> dict:
        return {
            "transform": self.transform_kind,
            "engine": self.engine,
            "anchor": self.anchor,
            "extensive_margin": self.extensive_margin.to_dict(),
            "grid": [float(a) for a in self.grid],
            "theta": [float(v) for v in self.theta],
            "se": [float(v) for v in self.se],
            "tstat": [float(v) for v in self.tstat],
            "approx": [float(v) for v in self.approx],
            **self.meta,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(DEFAULT_GRID if grid is None else grid, dtype=float).ravel()
    if grid.size == 0:
        raise InputError("empty scale grid")
    if not (np.isfinite(grid).all() and (grid > 0).all()):
        raise InputError("scale grid must be positive and finite")
    if grid.size > 1 and not (np.diff(grid) > 0).all():
        raise InputError("scale grid must be strictly increasing")
    return grid


def _map_ordered(fn, items, threads: int):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def sensitivity_curve(d: Dataset, t: Transform, grid=None, engine: str = "ols_diff_means",
                      vcov: str = "HC0", threads: int = 1) -> SensitivityCurve:
    """Evaluate theta_at on every grid point plus the extensive-margin fit.

    The approximation column is theta(a0) + gamma * log(a / a0), with a0 the
    smallest grid point >= 1 (the largest point if none is).
    """
    grid = _check_grid(grid)
    eng = _Engine(d, engine, vcov)
    results = _map_ordered(lambda a: eng.theta(t, a), list(grid), threads)
    gamma = eng.theta(Transform.indicator(), 1.0)
    gamma.estimator = f"{engine}:extensive_margin"
    theta = np.array([r.value for r in results])
    se = np.array([r.se for r in results])
    tstat = np.array([r.tstat for r in results])
    at_least_one = np.flatnonzero(grid >= 1.0)
    k = int(at_least_one[0]) if at_least_one.size else grid.size - 1
    a0 = float(grid[k])
    approx = theta[k] + gamma.value * np.log(grid / a0)
    return SensitivityCurve(grid, theta, se, tstat, gamma, approx, t.tag, a0, engine)


class ScaleSolution(NamedTuple):
    a: float
    theta: float
    steps: int
    bracket: tuple


def find_scale_for_target(d: Dataset, t: Transform, target: float,
                          engine: str = "ols_diff_means", tol: float = BISECT_TOL,
                          max_iter: int = BISECT_MAX) -> ScaleSolution:
    """A scale a with | |theta(a)| - target | < tol.

    Expands a by powers of ten from 1 until |theta| straddles the target,
    then bisects in log(a).  Only existence is guaranteed; other scales may
    hit the same target.
    """
    target = float(target)
    if not (target > 0 and math.isfinite(target)):
        raise InputError("target must be positive and finite")
    eng = _Engine(d, engine, "HC0")
    gamma = eng.theta(Transform.indicator(), 1.0).value
    if abs(gamma) < GAMMA_ZERO:
        raise NoExtensiveMargin("extensive-margin estimate is zero; no scale is guaranteed to reach the target")

    def gap(log_a):
        th = eng.theta(t, math.exp(log_a)).value
        return abs(th) - target, th

    lo_lim, hi_lim = math.log(A_MIN), math.log(A_MAX)
    step = math.log(10.0)
    x = 0.0
    f, th = gap(x)
    if abs(f) < tol:
        return ScaleSolution(1.0, th, 0, (1.0, 1.0))
    direction = 1.0 if f < 0 else -1.0
    while True:
        nx = x + direction * step
        if nx > hi_lim or nx < lo_lim:
            raise BracketNotFound(f"no bracket for target {target} within a in [{A_MIN:g}, {A_MAX:g}]")
        nf, nth = gap(nx)
        if abs(nf) < tol:
            return ScaleSolution(math.exp(nx), nth, 0, (math.exp(nx), math.exp(nx)))
        if (nf > 0) != (f > 0):
            break
        x, f = nx, nf
    lo, hi = (x, nx) if f < 0 else (nx, x)
    bracket = (math.exp(min(lo, hi)), math.exp(max(lo, hi)))
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        fm, thm = gap(mid)
        if abs(fm) < tol:
            return ScaleSolution(math.exp(mid), thm, it, bracket)
        if fm < 0:
            lo = mid
        else:
            hi = mid
    raise BracketNotFound(f"bisection did not reach tolerance {tol} in {max_iter} steps")


@dataclass
class TstatTable:
    grid: np.ndarray
    t_theta: np.ndarray
    t_gamma: float
    convergence_expected: bool

    def rows(self):
        for a, tt in zip(self.grid, self.t_theta):
            yield float(a), float(tt), float(self.t_gamma)


def tstat_table(d: Dataset, t: Transform, grid=None, engine: str = "ols_diff_means",
                vcov: str = "HC0", threads: int = 1) -> TstatTable:
    """t-statistics of theta(a) beside the extensive-margin t-statistic.

    ``convergence_expected`` is False when the extensive-margin estimate is
    zero, in which case the theta t-statistics need not approach it.
    """
    grid = _check_grid(grid)
    eng = _Engine(d, engine, vcov)
    results = _map_ordered(lambda a: eng.theta(t, a), list(grid), threads)
    gamma = eng.theta(Transform.indicator(), 1.0)
    return TstatTable(grid, np.array([r.tstat for r in results]), gamma.tstat,
                      abs(gamma.value) >= GAMMA_ZERO)


def rescale_summary(d: Dataset, t: Transform, factor: float = 100.0,
                    engine: str = "ols_diff_means", vcov: str = "HC0") -> dict:
    """theta(1), theta(factor), the extensive margin and the change between them.

    ``pct_change`` is 100 * (theta(factor) - theta(1)) / |theta(1)| and
    ``predicted_change`` is gamma * log(factor).
    """
    eng = _Engine(d, engine, vcov)
    base = eng.theta(t, 1.0)
    scaled = eng.theta(t, factor)
    gamma = eng.theta(Transform.indicator(), 1.0)
    raw = scaled.value - base.value
    pct = 100.0 * raw / abs(base.value) if base.value != 0 else math.nan
    return {
        "transform": t.tag,
        "factor": float(factor),
        "theta_1": base.value,
        "se_1": base.se,
        "theta_factor": scaled.value,
        "se_factor": scaled.se,
        "extensive_margin": gamma.value,
        "extensive_margin_se": gamma.se,
        "raw_change": raw,
        "pct_change": pct,
        "predicted_change": gamma.value * math.log(factor),
    }
