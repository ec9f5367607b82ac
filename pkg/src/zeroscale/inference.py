"""Clustered nonparametric bootstrap and the delta method.

Replicate ``r`` draws its resample from a Philox generator keyed by the
seed with ``r`` in the counter, so each replicate is a pure function of
``(seed, r)`` and the replicate set does not depend on the number of worker
threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .dataset import Dataset, require_clusters
from .errors import BootstrapFailure, InputError, ZeroScaleError
from .poisson import delta_exp_minus_one

__all__ = ["BootstrapSpec", "BootstrapResult", "cluster_bootstrap", "replicate_rng",
           "resample_rows", "delta_exp_minus_one", "MAX_FAILURE_SHARE"]

MAX_FAILURE_SHARE = 0.10


@dataclass(frozen=True)
class BootstrapSpec:
    """Resampling plan.

    ``cluster`` resamples whole clusters when the dataset has them and falls
    back to rows otherwise.  ``threads`` affects speed only.
    """

    draws: int = 1000
    seed: int = 0
    cluster: bool = True
    threads: int = 1

    def __post_init__(self):
        if int(self.draws) != self.draws or self.draws < 2:
            raise InputError(f"bootstrap draws must be an integer >= 2, got {self.draws!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise InputError("bootstrap seed must fit in 64 unsigned bits")
        if self.threads < 1:
            raise InputError("threads must be >= 1")


@dataclass
class BootstrapResult:
    """Replicates are stored as a ``(draws, k)`` array; failed draws are NaN."""

    estimate: np.ndarray
    replicates: np.ndarray = field(repr=False)
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_failed: int
    failed_draws: tuple
    skewness: np.ndarray
    spec: BootstrapSpec

    def summary(self, j: int = 0) -> dict:
        return {
            "estimate": float(self.estimate[j]),
            "se": float(self.se[j]),
            "ci": [float(self.ci_low[j]), float(self.ci_high[j])],
            "draws": self.spec.draws,
            "seed": self.spec.seed,
            "clustered": self.spec.cluster,
            "n_failed": self.n_failed,
            "skewness": float(self.skewness[j]),
        }

    def normal_qq(self, j: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Normal quantiles at plotting positions (i - 0.5)/n and the sorted
        successful replicates of component ``j``."""
        x = np.sort(self.replicates[:, j][np.isfinite(self.replicates[:, j])])
        return ndtri((np.arange(1, x.size + 1) - 0.5) / x.size), x


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(r)]))


def resample_rows(d: Dataset, rng: np.random.Generator, cluster: bool):
    """Row indices of one resample and the relabelled cluster ids (or None).

    Each drawn cluster becomes a distinct cluster in the resample even when
    the same original cluster is drawn twice.
    """
    if cluster and d.cluster is not None:
        ids = require_clusters(d)
        G = d.n_clusters
        order = np.argsort(ids, kind="stable")
        starts = np.searchsorted(ids[order], np.arange(G + 1))
        picks = rng.integers(0, G, size=G)
        pieces = [order[starts[g]:starts[g + 1]] for g in picks]
        rows = np.concatenate(pieces)
        labels = np.repeat(np.arange(G), [p.size for p in pieces])
        return rows, labels
    n = d.row_count
    return rng.integers(0, n, size=n), None


def _skew(x):
    x = x[np.isfinite(x)]
    if x.size < 3:
        return math.nan
    s = x.std()
    if s == 0:
        return 0.0
    return float(np.mean((x - x.mean()) ** 3) / s ** 3)


def cluster_bootstrap(d: Dataset, statistic: Callable[[Dataset], object],
                      spec: Optional[BootstrapSpec] = None) -> BootstrapResult:
    """Bootstrap a scalar or fixed-length vector statistic.

    The statistic is recomputed from scratch on every resample, so any
    data-dependent choice it makes is re-derived per draw.  A draw whose
    statistic raises a package error or returns a non-finite value counts as
    failed; more than 10% failures raises :class:`BootstrapFailure`.
    """
    spec = spec or BootstrapSpec()
    if spec.cluster and d.cluster is not None:
        require_clusters(d)
    estimate = np.atleast_1d(np.asarray(statistic(d), dtype=float))
    k = estimate.size

    def one(r):
        rows, labels = resample_rows(d, replicate_rng(spec.seed, r), spec.cluster)
        try:
            val = np.atleast_1d(np.asarray(statistic(d.take(rows, cluster=labels)), dtype=float))
        except (ZeroScaleError, ZeroDivisionError, FloatingPointError, np.linalg.LinAlgError):
            return None
        if val.size != k or not np.isfinite(val).all():
            return None
        return val

    draws = range(spec.draws)
    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            out = list(pool.map(one, draws))
    else:
        out = [one(r) for r in draws]

    reps = np.full((spec.draws, k), np.nan)
    failed = []
    for r, v in enumerate(out):
        if v is None:
            failed.append(r)
        else:
            reps[r] = v
    if len(failed) > MAX_FAILURE_SHARE * spec.draws:
        raise BootstrapFailure(
            f"{len(failed)} of {spec.draws} bootstrap draws failed (first: {failed[:5]})", tuple(failed)
        )
    ok = reps[~np.isnan(reps).any(axis=1)]
    se = ok.std(axis=0, ddof=1)
    lo, hi = np.percentile(ok, [2.5, 97.5], axis=0)
    skew = np.array([_skew(ok[:, j]) for j in range(k)])
    return BootstrapResult(estimate, reps, se, np.atleast_1d(lo), np.atleast_1d(hi),
                           len(failed), tuple(failed), skew, spec)
