"""Synthetic data-generating processes with known population parameters.

Each generator returns ``(Dataset, manifest)``.  The manifest records the
generator name, its parameters and the population quantities that can be
written in closed form.
"""

from __future__ import annotations

import math

import numpy as np

from .dataset import Dataset
from .errors import InputError

DGPS = ("two_point", "lognormal_zeros", "iv_one_sided", "did")


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _prob(name, p, open_low=False):
    if not (0 < p <= 1 if open_low else 0 <= p <= 1):
        raise InputError(f"{name} must be a probability, got {p!r}")
    return float(p)


def _n(n, least=4):
    if int(n) != n or n < least:
        raise InputError(f"n must be an integer >= {least}, got {n!r}")
    return int(n)


def _assign(rng, n):
    D = np.zeros(n)
    D[rng.permutation(n)[: n // 2]] = 1.0
    return D


def _clusters(n, cluster_size):
    if cluster_size is None:
        return None
    cluster_size = _n(cluster_size, 1)
    return np.arange(n) // cluster_size


def two_point(n=100000, seed=0, p0_pos=0.5, y0=1.0, p1_pos=0.75, y1=2.0, cluster_size=None):
    """Y(d) is 0 or the single positive value y_d, positive with prob p_d.

    Half the rows (rounded down) are treated.
    """
    n = _n(n)
    p0, p1 = _prob("p0_pos", p0_pos), _prob("p1_pos", p1_pos)
    if not (y0 > 0 and y1 > 0):
        raise InputError("positive values must be > 0")
    rng = _rng(seed)
    D = _assign(rng, n)
    u = rng.random(n)
    y = np.where(D == 1, np.where(u < p1, y1, 0.0), np.where(u < p0, y0, 0.0))
    gamma = p1 - p0
    manifest = {
        "dgp": "two_point",
        "params": {"n": n, "seed": int(seed), "p0_pos": p0, "y0": float(y0), "p1_pos": p1,
                   "y1": float(y1), "cluster_size": cluster_size},
        "extensive_margin": gamma,
        "theta_log1p_a1": p1 * math.log1p(y1) - p0 * math.log1p(y0),
        "theta_arcsinh_a1": p1 * math.asinh(y1) - p0 * math.asinh(y0),
        "ate_pct": (p1 * y1) / (p0 * y0) - 1.0 if p0 > 0 else None,
        "find_scale_applicable": gamma != 0,
    }
    return Dataset(y, D, cluster=_clusters(n, cluster_size)), manifest


def _lognormal_pair(rng, n, p0, p1, mu0, mu1, sigma):
    u = rng.random(n)
    eps = rng.standard_normal(n)
    y0 = np.where(u < p0, np.exp(mu0 + sigma * eps), 0.0)
    y1 = np.where(u < p1, np.exp(mu1 + sigma * eps), 0.0)
    return y0, y1


def _lognormal_truth(p0, p1, mu0, mu1, sigma):
    lift = math.exp(0.5 * sigma ** 2)
    return {
        "extensive_margin": p1 - p0,
        "ate_pct": (p1 * math.exp(mu1)) / (p0 * math.exp(mu0)) - 1.0 if p0 > 0 else None,
        "intensive_log": mu1 - mu0,
        "intensive_levels": (math.exp(mu1) - math.exp(mu0)) * lift,
        "shares": {"NT": 1.0 - max(p0, p1), "C": abs(p1 - p0), "AT": min(p0, p1)},
        "find_scale_applicable": p1 != p0,
    }


def lognormal_zeros(n=10000, seed=0, p0_pos=0.5, p1_pos=0.6, mu0=0.0, mu1=0.2, sigma=1.0,
                    cluster_size=None):
    """Lognormal positives with zeros, monotone and rank-preserving.

    A latent uniform U makes Y(d) positive when U < p_d, and the positive
    parts share one normal draw, so always-positive units have
    log Y(1) - log Y(0) = mu1 - mu0.
    """
    n = _n(n)
    p0, p1 = _prob("p0_pos", p0_pos, True), _prob("p1_pos", p1_pos, True)
    if not sigma >= 0:
        raise InputError("sigma must be non-negative")
    rng = _rng(seed)
    D = _assign(rng, n)
    y0, y1 = _lognormal_pair(rng, n, p0, p1, mu0, mu1, sigma)
    y = np.where(D == 1, y1, y0)
    manifest = {
        "dgp": "lognormal_zeros",
        "params": {"n": n, "seed": int(seed), "p0_pos": p0, "p1_pos": p1, "mu0": float(mu0),
                   "mu1": float(mu1), "sigma": float(sigma), "cluster_size": cluster_size},
        **_lognormal_truth(p0, p1, mu0, mu1, sigma),
    }
    return Dataset(y, D, cluster=_clusters(n, cluster_size)), manifest


def iv_one_sided(n=100000, seed=0, complier_share=0.6, p0_pos=0.6, p1_pos=0.5, mu0=1.0,
                 sigma=1.0, ate_pct=-0.2, cluster_size=None):
    """One-sided noncompliance: Z randomized, D = Z * S for a latent S.

    Potential outcomes follow :func:`lognormal_zeros`, independent of S,
    with mu1 chosen so that E[Y(1)] / E[Y(0)] - 1 equals ``ate_pct``.
    """
    n = _n(n)
    s = _prob("complier_share", complier_share, True)
    p0, p1 = _prob("p0_pos", p0_pos, True), _prob("p1_pos", p1_pos, True)
    if not ate_pct > -1:
        raise InputError("ate_pct must exceed -1")
    mu1 = mu0 + math.log((1.0 + ate_pct) * p0 / p1)
    rng = _rng(seed)
    Z = (rng.random(n) < 0.5).astype(float)
    S = (rng.random(n) < s).astype(float)
    D = Z * S
    y0, y1 = _lognormal_pair(rng, n, p0, p1, mu0, mu1, sigma)
    y = np.where(D == 1, y1, y0)
    manifest = {
        "dgp": "iv_one_sided",
        "params": {"n": n, "seed": int(seed), "complier_share": s, "p0_pos": p0, "p1_pos": p1,
                   "mu0": float(mu0), "mu1": mu1, "sigma": float(sigma), "ate_pct": float(ate_pct),
                   "cluster_size": cluster_size},
        **_lognormal_truth(p0, p1, mu0, mu1, sigma),
    }
    return Dataset(y, D, instrument=Z, cluster=_clusters(n, cluster_size)), manifest


def did(n_units=2000, seed=0, means=(10527.0, 465.0, 4742.0, 1172.0), p_pos=0.6):
    """Two-period panel with cell means (treated pre, treated post,
    control pre, control post).

    Y = mean * B * E / p_pos with B ~ Bernoulli(p_pos) and E ~ Exp(1), so
    every cell has the stated population mean and a share 1 - p_pos of
    zeros.  Rows carry the unit id as cluster.
    """
    n_units = _n(n_units, 4)
    p = _prob("p_pos", p_pos, True)
    if len(means) != 4 or not all(m > 0 for m in means):
        raise InputError("means must be four positive numbers")
    rng = _rng(seed)
    G_unit = _assign(rng, n_units)
    G = np.repeat(G_unit, 2)
    P = np.tile([0.0, 1.0], n_units)
    cell = np.where(G == 1, np.where(P == 0, means[0], means[1]), np.where(P == 0, means[2], means[3]))
    B = rng.random(G.size) < p
    E = rng.exponential(1.0, G.size)
    y = cell * B * E / p
    unit = np.repeat(np.arange(n_units), 2)
    att = (means[1] / means[0]) / (means[3] / means[2]) - 1.0
    manifest = {
        "dgp": "did",
        "params": {"n_units": n_units, "seed": int(seed), "means": [float(m) for m in means],
                   "p_pos": p},
        "att_pct": att,
        "find_scale_applicable": False,
    }
    return Dataset(y, G, post=P, group=G, cluster=unit), manifest


def simulate(dgp: str, **params):
    if dgp not in DGPS:
        raise InputError(f"unknown dgp {dgp!r}; expected one of {DGPS}")
    fn = {"two_point": two_point, "lognormal_zeros": lognormal_zeros,
          "iv_one_sided": iv_one_sided, "did": did}[dgp]
    try:
        return fn(**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for dgp {dgp!r}: {exc}") from None
