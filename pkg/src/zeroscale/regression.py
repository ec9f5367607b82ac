"""OLS and just-identified two-stage least squares with sandwich variances.

All solves go through a QR factorization of the (projected) design; the
normal equations are never formed.  The default variance is HC0 (or the
cluster sandwich without the G/(G-1) factor); ``small_sample=True`` adds the
n/(n-J) factor and ``cluster_correction=True`` adds G/(G-1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import dense_ids
from .errors import InputError, RankDeficient, TooFewClusters, WeakFirstStage

RANK_TOL = 1e-10


@dataclass
class FitResult:
    coefficients: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    n: int
    J: int
    cluster_count: int = 0
    vcov_kind: str = "HC0"
    first_stage: Optional[dict] = None
    names: tuple = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def tstats(self) -> np.ndarray:
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(se > 0, self.coefficients / np.where(se > 0, se, 1.0), np.nan)
        return t


def design(*columns, n=None) -> np.ndarray:
    """Stack a constant with the given columns (1-d arrays or 2-d blocks)."""
    blocks = []
    for c in columns:
        if c is None:
            continue
        c = np.asarray(c, dtype=float)
        blocks.append(c[:, None] if c.ndim == 1 else c)
    if n is None:
        n = blocks[0].shape[0]
    return np.column_stack([np.ones(n)] + blocks)


def check_rank(X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] < 1:
        raise InputError("design matrix must be 2-d with at least one column")
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"{X.shape[0]} rows for {X.shape[1]} columns")
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0 or s[-1] < RANK_TOL * s[0]:
        raise RankDeficient(
            f"design is rank deficient: smallest/largest singular value {s[-1] / s[0] if s[0] else 0:.3g}"
        )


def _qr(X):
    Q, R = np.linalg.qr(X, mode="reduced")
    return Q, R


def _meat(Q: np.ndarray, e: np.ndarray, clusters) -> tuple[np.ndarray, int]:
    """Sum of score outer products in the orthonormal basis Q."""
    scores = Q * e[:, None]
    if clusters is None:
        return scores.T @ scores, 0
    clusters = np.asarray(clusters)
    G = int(clusters.max()) + 1 if clusters.size else 0
    if np.unique(clusters).size < 2:
        raise TooFewClusters("cluster-robust variance needs at least 2 clusters")
    summed = np.zeros((G, Q.shape[1]))
    np.add.at(summed, clusters, scores)
    return summed.T @ summed, int(np.unique(clusters).size)


def _sandwich(R, Q, e, clusters, small_sample, cluster_correction):
    n, J = Q.shape
    meat, G = _meat(Q, e, clusters)
    Rinv = solve_triangular(R, np.eye(J))
    V = Rinv @ meat @ Rinv.T
    V = 0.5 * (V + V.T)
    if small_sample:
        V *= n / (n - J) if n > J else np.inf
    if cluster_correction and G > 1:
        V *= G / (G - 1)
    return V, G


def _vcov_args(vcov, clusters):
    if vcov in ("HC0", "hc0", None):
        return None
    if vcov in ("cluster", "CL"):
        if clusters is None:
            raise InputError("cluster vcov requested without cluster ids")
        return dense_ids(clusters)
    raise InputError(f"unknown vcov kind {vcov!r}")


def ols_fit(X, y, vcov: str = "HC0", clusters=None, *, small_sample=False,
            cluster_correction=False, names=()) -> FitResult:
    """Least squares of ``y`` on ``X`` (first column the constant)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise InputError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    check_rank(X)
    cl = _vcov_args(vcov, clusters)
    Q, R = _qr(X)
    beta = solve_triangular(R, Q.T @ y)
    e = y - X @ beta
    V, G = _sandwich(R, Q, e, cl, small_sample, cluster_correction)
    return FitResult(beta, V, e, X.shape[0], X.shape[1], G, "HC0" if cl is None else "cluster",
                     names=tuple(names))


def tsls_fit(X_exog, d, z, y, vcov: str = "HC0", clusters=None, *, small_sample=False,
             cluster_correction=False, warn=True) -> FitResult:
    """Just-identified TSLS of ``y`` on ``d`` instrumented by ``z``.

    Regressors are ordered ``[constant, d, other exogenous...]`` so the
    coefficient on ``d`` is always at index 1.  The first-stage t-statistic
    on ``z`` and its square (the F statistic) are stored in ``first_stage``.
    """
    X_exog = np.asarray(X_exog, dtype=float)
    if X_exog.ndim == 1:
        X_exog = X_exog[:, None]
    d = np.asarray(d, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = X_exog.shape[0]
    if not (d.shape[0] == z.shape[0] == y.shape[0] == n):
        raise InputError("tsls inputs have mismatched lengths")
    X = np.column_stack([X_exog[:, :1], d, X_exog[:, 1:]])
    Z = np.column_stack([X_exog[:, :1], z, X_exog[:, 1:]])
    check_rank(Z)
    cl = _vcov_args(vcov, clusters)

    Qz, Rz = _qr(Z)
    # first stage
    pi = solve_triangular(Rz, Qz.T @ d)
    v = d - Z @ pi
    Vfs, _ = _sandwich(Rz, Qz, v, cl, small_sample, cluster_correction)
    fs_se = float(np.sqrt(max(Vfs[1, 1], 0.0)))
    fs_t = float(pi[1] / fs_se) if fs_se > 0 else np.inf * np.sign(pi[1])
    first_stage = {"coef": float(pi[1]), "se": fs_se, "t": fs_t, "F": fs_t ** 2}
    if warn and abs(fs_t) < 2:
        warnings.warn(f"weak first stage: |t| = {abs(fs_t):.3g} < 2", WeakFirstStage, stacklevel=2)

    Xhat = Qz @ (Qz.T @ X)
    check_rank(Xhat)
    Qh, Rh = _qr(Xhat)
    beta = solve_triangular(Rh, Qh.T @ y)
    e = y - X @ beta
    V, G = _sandwich(Rh, Qh, e, cl, small_sample, cluster_correction)
    return FitResult(beta, V, e, n, X.shape[1], G, "HC0" if cl is None else "cluster",
                     first_stage=first_stage)


def tsls_weights(X_exog, d, z) -> np.ndarray:
    """Row weights w with TSLS coefficient on ``d`` equal to ``w @ y``.

    The just-identified estimator is linear in the outcome, which lets many
    outcomes share one factorization.
    """
    X_exog = np.asarray(X_exog, dtype=float)
    if X_exog.ndim == 1:
        X_exog = X_exog[:, None]
    X = np.column_stack([X_exog[:, :1], d, X_exog[:, 1:]])
    Z = np.column_stack([X_exog[:, :1], z, X_exog[:, 1:]])
    check_rank(Z)
    Qz, Rz = _qr(Z)
    Xhat = Qz @ (Qz.T @ X)
    check_rank(Xhat)
    Qh, Rh = _qr(Xhat)
    e1 = np.zeros(X.shape[1])
    e1[1] = 1.0
    # beta = Rh^{-1} Qh' y  =>  beta_1 = (Rh^{-T} e1)' Qh' y
    r = solve_triangular(Rh, e1, trans="T")
    return Qh @ r
