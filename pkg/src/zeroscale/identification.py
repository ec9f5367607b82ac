"""Numerical checks on what fixed marginals identify.

For finite-support potential-outcome marginals, the identified set of
E[g(Y(1), Y(0))] is the range of a transportation program over couplings.
Alongside it sit the two functional-equation checks that separate the log
ratio from other summaries (the rectangle identity behind additive
separability, and degree-zero homogeneity), a report that combines them,
and the two-part decomposition of the difference in positive-part means.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InfeasibleMarginals, InputError, MonotonicityCellViolated, UnboundedG
from .transforms import Transform, apply_array
from .transport import solve_transport

MAX_SUPPORT = 200
PROB_TOL = 1e-12
POINT_ID_TOL = 1e-9
TEST_TOL = 1e-9
LOG_FIT_TOL = 1e-8
DEFAULT_SCALES = (0.01, 0.5, 2.0, 100.0)


def _support(values, probs, name):
    s = np.asarray(values, dtype=float).ravel()
    p = np.asarray(probs, dtype=float).ravel()
    if s.size == 0 or s.size != p.size:
        raise InputError(f"{name}: support and probabilities must be non-empty and of equal length")
    if not np.isfinite(s).all() or (s < 0).any():
        raise InputError(f"{name}: support must be finite and non-negative")
    if s.size > 1 and not (np.diff(s) > 0).all():
        raise InputError(f"{name}: support must be sorted and distinct")
    if (p < 0).any() or not np.isfinite(p).all():
        raise InfeasibleMarginals(f"{name}: negative probability")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise InfeasibleMarginals(f"{name}: probabilities sum to {p.sum()!r}, not 1")
    return s, p


@dataclass(frozen=True, eq=False)
class DiscreteMarginals:
    support1: np.ndarray
    probs1: np.ndarray
    support0: np.ndarray
    probs0: np.ndarray

    def __post_init__(self):
        s1, p1 = _support(self.support1, self.probs1, "Y(1)")
        s0, p0 = _support(self.support0, self.probs0, "Y(0)")
        for k, v in (("support1", s1), ("probs1", p1), ("support0", s0), ("probs0", p0)):
            object.__setattr__(self, k, v)

    @property
    def has_zeros(self) -> bool:
        return bool(self.support1[0] == 0 or self.support0[0] == 0)

    def positive_share(self, arm: int) -> float:
        s, p = (self.support1, self.probs1) if arm == 1 else (self.support0, self.probs0)
        return float(p[s > 0].sum())


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Joint probabilities ``pi[i, j]`` of (support1[i], support0[j])."""

    support1: np.ndarray
    support0: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        s1 = np.asarray(self.support1, dtype=float).ravel()
        s0 = np.asarray(self.support0, dtype=float).ravel()
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape != (s1.size, s0.size):
            raise InputError(f"joint has shape {pi.shape}, expected {(s1.size, s0.size)}")
        if (pi < 0).any() or not np.isfinite(pi).all():
            raise InfeasibleMarginals("joint probabilities must be non-negative")
        if abs(pi.sum() - 1.0) > PROB_TOL:
            raise InfeasibleMarginals(f"joint probabilities sum to {pi.sum()!r}")
        object.__setattr__(self, "support1", s1)
        object.__setattr__(self, "support0", s0)
        object.__setattr__(self, "pi", pi)

    def marginals(self) -> DiscreteMarginals:
        return DiscreteMarginals(self.support1, self.pi.sum(axis=1), self.support0, self.pi.sum(axis=0))

    def expect(self, g: "GFunction") -> float:
        return float(np.sum(self.pi * g.table(self.support1, self.support0)))


G_KINDS = ("log_ratio", "pct_change", "transform_difference", "indicator_both_positive", "custom")


@dataclass(frozen=True, eq=False)
class GFunction:
    """A summary g(y1, y0).

    ``custom`` takes ``values`` on the product of ``grid1`` and ``grid0``
    and may only be evaluated at those points.
    """

    kind: str
    transform: Optional[Transform] = None
    grid1: Optional[np.ndarray] = None
    grid0: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = field(default=None, repr=False)
    func: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in G_KINDS:
            raise InputError(f"unknown g kind {self.kind!r}")
        if self.kind == "transform_difference" and self.transform is None:
            raise InputError("transform_difference needs a transform")
        if self.kind == "custom" and self.func is None:
            g1 = np.asarray(self.grid1, dtype=float).ravel()
            g0 = np.asarray(self.grid0, dtype=float).ravel()
            v = np.asarray(self.values, dtype=float)
            if v.shape != (g1.size, g0.size):
                raise InputError(f"custom g table has shape {v.shape}, expected {(g1.size, g0.size)}")
            for g in (g1, g0):
                if g.size == 0 or (g.size > 1 and not (np.diff(g) > 0).all()):
                    raise InputError("custom g grids must be non-empty, sorted and distinct")
            object.__setattr__(self, "grid1", g1)
            object.__setattr__(self, "grid0", g0)
            object.__setattr__(self, "values", v)

    @classmethod
    def log_ratio(cls):
        return cls("log_ratio")

    @classmethod
    def pct_change(cls):
        return cls("pct_change")

    @classmethod
    def transform_difference(cls, t: Transform):
        return cls("transform_difference", transform=t)

    @classmethod
    def indicator_both_positive(cls):
        return cls("indicator_both_positive")

    @classmethod
    def custom(cls, grid1, grid0, values):
        return cls("custom", grid1=grid1, grid0=grid0, values=values)

    @classmethod
    def from_callable(cls, func):
        """A custom g given by a vectorized function of (y1, y0)."""
        return cls("custom", func=func)

    @property
    def tag(self) -> str:
        if self.kind == "transform_difference":
            return f"transform_difference({self.transform.tag})"
        return self.kind

    def __call__(self, y1, y0):
        y1 = np.asarray(y1, dtype=float)
        y0 = np.asarray(y0, dtype=float)
        y1, y0 = np.broadcast_arrays(y1, y0)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "log_ratio":
                return np.log(y1) - np.log(y0)
            if self.kind == "pct_change":
                return (y1 - y0) / y0
            if self.kind == "indicator_both_positive":
                return ((y1 > 0) & (y0 > 0)).astype(float)
            if self.kind == "transform_difference":
                t = self.transform
                return apply_array(t, y1) - apply_array(t, y0)
        if self.func is not None:
            return np.asarray(self.func(y1, y0), dtype=float)
        i = _lookup(self.grid1, y1)
        j = _lookup(self.grid0, y0)
        return self.values[i, j]

    def table(self, s1, s0) -> np.ndarray:
        """g on the product s1 x s0 as a matrix."""
        s1 = np.asarray(s1, dtype=float)
        s0 = np.asarray(s0, dtype=float)
        return self(s1[:, None], s0[None, :])


def _lookup(grid, x):
    k = np.searchsorted(grid, x)
    k = np.minimum(k, grid.size - 1)
    if not np.all(grid[k] == x):
        bad = np.asarray(x)[grid[k] != x].ravel()[0]
        raise InputError(f"custom g is not tabulated at {bad!r}; tables are not interpolated")
    return k


@dataclass
class CouplingRange:
    min: float
    max: float
    argmin: DiscreteJoint
    argmax: DiscreteJoint
    point_identified: bool

    @property
    def width(self) -> float:
        return self.max - self.min


def coupling_range(m: DiscreteMarginals, g: GFunction,
                   forbidden: Optional[np.ndarray] = None) -> CouplingRange:
    """Smallest and largest E[g] over couplings of ``m``.

    ``forbidden`` is a boolean mask of cells that must carry no mass (for
    example a monotonicity restriction); g is not evaluated there.
    """
    s1, s0 = m.support1, m.support0
    if s1.size > MAX_SUPPORT or s0.size > MAX_SUPPORT:
        raise InputError(f"supports larger than {MAX_SUPPORT} points are not supported")
    G = g.table(s1, s0)
    mask = np.zeros(G.shape, dtype=bool) if forbidden is None else np.asarray(forbidden, dtype=bool)
    if mask.shape != G.shape:
        raise InputError("forbidden mask does not match the support product")
    bad = ~np.isfinite(G) & ~mask
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise UnboundedG(f"g({s1[i]!r}, {s0[j]!r}) is not finite")
    G = np.where(mask, 0.0, G)
    lo = solve_transport(G, m.probs1, m.probs0, mask)
    hi = solve_transport(-G, m.probs1, m.probs0, mask)
    if max(lo.forbidden_mass, hi.forbidden_mass) > 1e-12:
        raise InfeasibleMarginals("no coupling of these marginals avoids the forbidden cells")
    vmin, vmax = lo.objective, -hi.objective
    width = vmax - vmin
    return CouplingRange(vmin, vmax, DiscreteJoint(s1, s0, lo.flow), DiscreteJoint(s1, s0, hi.flow),
                         bool(width < POINT_ID_TOL * (abs(vmin) + abs(vmax) + 1.0)))


@dataclass
class FunctionalTest:
    holds: bool
    worst_violation: float
    witness: Optional[tuple]


def separability_test(g: GFunction, grid: Sequence[float]) -> FunctionalTest:
    """Rectangle identity g(y1,y0) + g(y1',y0') = g(y1',y0) + g(y1,y0').

    Checked over all y1 < y1', y0 < y0' in ``grid``; the witness is
    (y1, y0, a, b) with y1' = y1 + a and y0' = y0 + b.
    """
    x = np.unique(np.asarray(grid, dtype=float))
    if x.size < 2:
        raise InputError("separability test needs at least two grid points")
    if not (x > 0).all():
        raise InputError("separability grid must be strictly positive")
    G = g.table(x, x)
    # V[i, k, j, l] = G[i,j] + G[k,l] - G[k,j] - G[i,l]
    V = (G[:, None, :, None] + G[None, :, None, :]
         - G[None, :, :, None] - G[:, None, None, :])
    n = x.size
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    valid = upper[:, :, None, None] & upper[None, None, :, :]
    V = np.where(valid, np.abs(V), -1.0)
    V = np.where(np.isnan(V), np.inf, V)
    flat = int(np.argmax(V))
    worst = float(V.ravel()[flat])
    i, k, j, l = np.unravel_index(flat, V.shape)
    witness = (float(x[i]), float(x[j]), float(x[k] - x[i]), float(x[l] - x[j]))
    holds = worst < TEST_TOL
    return FunctionalTest(holds, worst, None if holds else witness)


def scale_invariance_test(g: GFunction, grid: Sequence[float],
                          scales: Sequence[float] = DEFAULT_SCALES) -> FunctionalTest:
    """g(a*y1, a*y0) = g(y1, y0) over grid x grid x scales; witness (y1, y0, a)."""
    x = np.unique(np.asarray(grid, dtype=float))
    a = np.asarray(scales, dtype=float).ravel()
    if x.size == 0 or a.size == 0:
        raise InputError("scale test needs a grid and scales")
    if (x < 0).any() or not (a > 0).all():
        raise InputError("grid must be non-negative and scales positive")
    base = g.table(x, x)
    worst, witness = -1.0, None
    for s in a:
        diff = np.abs(g.table(s * x, s * x) - base)
        same_inf = np.isinf(base) & (g.table(s * x, s * x) == base)
        diff = np.where(same_inf, 0.0, np.where(np.isnan(diff), np.inf, diff))
        i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
        if diff[i, j] > worst:
            worst, witness = float(diff[i, j]), (float(x[i]), float(x[j]), float(s))
    holds = worst < TEST_TOL
    return FunctionalTest(holds, worst, None if holds else witness)


def trilemma_report(m: DiscreteMarginals, g: GFunction,
                    scales: Sequence[float] = DEFAULT_SCALES) -> dict:
    """The three properties for ``g`` at the marginals ``m``.

    (a) averaged form holds by construction; (b) is the scale test on the
    support points; (c) is point identification by the coupling range.
    When (b) and (c) hold on strictly positive marginals, g is fitted by
    c*log(y1/y0) + d on the support product.
    """
    cr = coupling_range(m, g)
    pts = np.union1d(m.support1, m.support0)
    scale = scale_invariance_test(g, pts, scales)
    positive = pts[pts > 0]
    separable = separability_test(g, positive) if positive.size >= 2 else None
    report = {
        "g": g.tag,
        "has_zeros": m.has_zeros,
        "averaged_form": True,
        "scale_invariant": scale.holds,
        "scale_witness": scale.witness,
        "scale_worst_violation": scale.worst_violation,
        "point_identified": cr.point_identified,
        "coupling_range": [cr.min, cr.max],
        "separable_on_support": None if separable is None else separable.holds,
        "all_three": bool(scale.holds and cr.point_identified),
    }
    # all three with zeros in the support would contradict the trilemma
    report["consistent_with_trilemma"] = not (report["all_three"] and m.has_zeros)
    report["log_form"] = None
    if report["all_three"] and not m.has_zeros:
        G = g.table(m.support1, m.support0).ravel()
        L = (np.log(m.support1)[:, None] - np.log(m.support0)[None, :]).ravel()
        A = np.column_stack([L, np.ones_like(L)])
        coef, *_ = np.linalg.lstsq(A, G, rcond=None)
        resid = float(np.max(np.abs(A @ coef - G))) if G.size else 0.0
        report["log_form"] = {"c": float(coef[0]), "d": float(coef[1]), "max_residual": resid,
                              "holds": resid < LOG_FIT_TOL}
    return report


@dataclass
class TwoPart:
    tau_a: float
    tau_b: float
    intensive: float
    alpha: float
    selection: float
    identity_gap: float


def two_part_decomposition(joint: DiscreteJoint) -> TwoPart:
    """Split tau_b = E[Y1|Y1>0] - E[Y0|Y0>0] into intensive + alpha*selection.

    Requires P(Y1 = 0, Y0 > 0) = 0.  ``selection`` is zero when no unit is
    positive only under treatment.
    """
    s1, s0, pi = joint.support1, joint.support0, joint.pi
    p1, p0 = s1 > 0, s0 > 0
    bad = pi[np.ix_(~p1, p0)]
    if bad.size and bad.sum() > 0:
        raise MonotonicityCellViolated(f"P(Y(1)=0, Y(0)>0) = {bad.sum()!r} > 0")
    P1 = float(pi[p1].sum())
    P0 = float(pi[:, p0].sum())
    if not P1 > 0:
        raise InputError("P(Y(1) > 0) must be positive")
    both = pi[np.ix_(p1, p0)]
    mass_both = float(both.sum())
    if not mass_both > 0:
        raise InputError("no mass with both potential outcomes positive")
    comp = pi[np.ix_(p1, ~p0)].sum(axis=1)
    mass_comp = float(comp.sum())
    y1p, y0p = s1[p1], s0[p0]
    e1_pos = float(pi[p1].sum(axis=1) @ y1p) / P1
    e0_pos = float(pi[:, p0].sum(axis=0) @ y0p) / P0
    e1_both = float(both.sum(axis=1) @ y1p) / mass_both
    e0_both = float(both.sum(axis=0) @ y0p) / mass_both
    alpha = mass_comp / P1
    selection = float(comp @ y1p) / mass_comp - e1_both if mass_comp > 0 else 0.0
    tau_b = e1_pos - e0_pos
    intensive = e1_both - e0_both
    return TwoPart(P1 - P0, tau_b, intensive, alpha, selection, tau_b - (intensive + alpha * selection))


def sinkhorn_coupling(m: DiscreteMarginals, rng: np.random.Generator, iters: int = 2000) -> DiscreteJoint:
    """A random coupling: a positive random matrix scaled to the marginals."""
    K = rng.random((m.support1.size, m.support0.size)) + 1e-3
    a, b = m.probs1, m.probs0
    u = np.ones(a.size)
    v = np.ones(b.size)
    for _ in range(iters):
        u = np.divide(a, K @ v, out=np.zeros_like(a), where=(K @ v) > 0)
        v = np.divide(b, K.T @ u, out=np.zeros_like(b), where=(K.T @ u) > 0)
        # column sums are exact after the v-update; stop once rows agree too
        if np.max(np.abs(u * (K @ v) - a)) < 1e-14:
            break
    pi = u[:, None] * K * v[None, :]
    pi /= pi.sum()
    return DiscreteJoint(m.support1, m.support0, pi)
