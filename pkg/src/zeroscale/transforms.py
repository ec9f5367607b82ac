"""Outcome transformations m(a*y).

A :class:`Transform` couples a functional form with a scale ``a`` (the
change of units applied before the map).  Log-like forms (``log1p``,
``arcsinh``) switch to an expansion in log(a) + log(y) once a*y leaves the
floating-point range, so that any finite scale can be evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import min_positive_outcome
from .errors import DomainError, EmptyReference, InputError, MonotonicityViolation, NonFiniteInput

KINDS = ("identity", "log", "log1p", "arcsinh", "logc", "calibrated",
         "indicator", "threshold", "rank")

# Above this argument the log-like forms switch to log(z) plus a series tail.
# numpy's arcsinh/log1p are accurate up to here; only a*y itself overflows.
_LARGE = 1e300


@dataclass(frozen=True, eq=False)
class Transform:
    kind: str
    scale: float = 1.0
    c: Optional[float] = None
    x: Optional[float] = None
    y_min: Optional[float] = None
    threshold: Optional[float] = None
    reference: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown transform kind {self.kind!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InputError(f"scale must be positive and finite, got {self.scale!r}")
        if self.kind == "logc" and not (self.c is not None and self.c > 0):
            raise InputError("logc requires c > 0")
        if self.kind == "calibrated":
            if self.x is None or self.x < 0:
                raise InputError("calibrated requires x >= 0")
            if self.y_min is not None and not self.y_min > 0:
                raise InputError("calibrated requires y_min > 0")
        if self.kind == "threshold" and (self.threshold is None or self.threshold < 0):
            raise InputError("threshold requires a non-negative level")
        if self.kind == "rank" and self.reference is not None:
            ref = np.sort(np.asarray(self.reference, dtype=float).ravel())
            if ref.size == 0:
                raise EmptyReference("rank reference is empty")
            ref.setflags(write=False)
            object.__setattr__(self, "reference", ref)

    # constructors ---------------------------------------------------------

    @classmethod
    def identity(cls, scale=1.0):
        return cls("identity", scale)

    @classmethod
    def log(cls, scale=1.0):
        return cls("log", scale)

    @classmethod
    def log1p(cls, scale=1.0):
        return cls("log1p", scale)

    @classmethod
    def arcsinh(cls, scale=1.0):
        return cls("arcsinh", scale)

    @classmethod
    def logc(cls, c, scale=1.0):
        return cls("logc", scale, c=float(c))

    @classmethod
    def calibrated(cls, x, y_min=None, scale=1.0):
        return cls("calibrated", scale, x=float(x), y_min=None if y_min is None else float(y_min))

    @classmethod
    def indicator(cls, scale=1.0):
        return cls("indicator", scale)

    @classmethod
    def at_least(cls, level, scale=1.0):
        return cls("threshold", scale, threshold=float(level))

    @classmethod
    def rank(cls, reference=None, scale=1.0):
        return cls("rank", scale, reference=reference)

    def with_scale(self, scale: float) -> "Transform":
        return replace(self, scale=float(scale))

    def rescaled(self, factor: float) -> "Transform":
        """Same map, with units multiplied by a further ``factor``."""
        return self.with_scale(self.scale * factor)

    @property
    def tag(self) -> str:
        params = {"logc": f"c={self.c}", "calibrated": f"x={self.x}",
                  "threshold": f"y={self.threshold}"}.get(self.kind)
        base = self.kind if params is None else f"{self.kind}:{params}"
        return base if self.scale == 1.0 else f"{base}@a={self.scale:g}"

    def __call__(self, y):
        return apply_array(self, y)


def parse_transform(text: str, **extra) -> Transform:
    """Parse a config string such as ``"logc:c=2"`` or ``"calibrated:x=0.1"``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise InputError(f"malformed transform parameter {item!r} in {text!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError:
                raise InputError(f"non-numeric transform parameter {item!r}") from None
    params.update(extra)
    scale = params.pop("a", params.pop("scale", 1.0))
    if kind == "threshold":
        if "y" in params:
            params["threshold"] = params.pop("y")
    if kind not in KINDS:
        raise InputError(f"unknown transform {kind!r}")
    try:
        return Transform(kind, scale=scale, **params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {kind!r}: {exc}") from None


def _loglike_large(kind, a, y):
    # log(a*y) computed without forming a*y; valid for a*y > _LARGE.
    logz = math.log(a) + np.log(y)
    z = np.exp(np.minimum(logz, 700.0))
    if kind == "log1p":
        return logz + np.log1p(1.0 / z)
    # arcsinh(z) = log(2z) + log1p(1/(4 z^2)) + O(z^-4)
    return math.log(2.0) + logz + np.log1p(0.25 / z / z)


def apply_array(t: Transform, y) -> np.ndarray:
    """Vectorized m(a*y); raises on the first invalid element."""
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        raise NonFiniteInput(f"non-finite input at index {int(np.flatnonzero(~np.isfinite(y).ravel())[0])}")
    if (y < 0).any():
        raise DomainError(f"negative input at index {int(np.flatnonzero((y < 0).ravel())[0])}")
    a = t.scale
    k = t.kind

    if k in ("log1p", "arcsinh"):
        out = np.empty_like(y)
        with np.errstate(over="ignore"):
            z = a * y
        big = ~(z <= _LARGE)
        small = ~big
        out[small] = np.log1p(z[small]) if k == "log1p" else np.arcsinh(z[small])
        if big.any():
            out[big] = _loglike_large(k, a, y[big])
        return out
    if k == "identity":
        return a * y
    if k == "log":
        if (y == 0).any():
            raise DomainError(f"log of zero at index {int(np.flatnonzero((y == 0).ravel())[0])}")
        return math.log(a) + np.log(y)
    if k == "logc":
        # log(c + a*y) = log(a) + log(c/a + y); the second form avoids overflow.
        with np.errstate(over="ignore"):
            z = a * y
        if np.isfinite(z).all():
            return np.log(t.c + z)
        return math.log(a) + np.log(t.c / a + y)
    if k == "calibrated":
        if t.y_min is None:
            raise InputError("calibrated transform needs y_min; use calibrated_for(data)")
        z = (a * y) / t.y_min
        pos = z > 0
        floor = math.exp(-t.x)
        bad = pos & (z < floor)
        if bad.any():
            i = int(np.flatnonzero(bad.ravel())[0])
            raise MonotonicityViolation(
                f"value {float(y.ravel()[i])!r} at index {i} lies in (0, y_min*exp(-x)); "
                "log(y/y_min) would fall below the value -x assigned to zero"
            )
        out = np.full_like(z, -t.x)
        out[pos] = np.log(z[pos])
        return out
    if k == "indicator":
        return (y > 0).astype(float)
    if k == "threshold":
        return (a * y >= t.threshold).astype(float)
    if k == "rank":
        if t.reference is None:
            raise EmptyReference("rank transform has no reference sample")
        idx = np.searchsorted(t.reference, a * y, side="right")
        return idx / t.reference.size
    raise InputError(k)


def apply(t: Transform, y: float) -> float:
    """Scalar m(a*y)."""
    return float(apply_array(t, np.array([y], dtype=float))[0])


def transform_column(d, t: Transform) -> np.ndarray:
    """Apply ``t`` to every outcome; errors name the offending row."""
    return apply_array(t, d.outcome)


def calibrated_for(d, x: float, scale: float = 1.0) -> Transform:
    """CalibratedLog normalised by the in-sample minimum positive outcome."""
    return Transform.calibrated(x, y_min=scale * min_positive_outcome(d), scale=scale)
