"""Column-oriented samples shared by every estimator."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    InputError,
    MissingColumn,
    NegativeOutcome,
    NonNumericCell,
    NoPositiveOutcomes,
    NonPositiveScale,
    NotBinary,
    TooFewClusters,
)

ROLES = ("outcome", "treatment", "instrument", "post", "group", "covariate", "cluster")


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable sample.

    ``outcome`` must be finite and non-negative.  ``covariates`` is an
    ``(n, k)`` matrix, possibly with ``k == 0``.  ``cluster`` holds dense
    integer ids.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    instrument: Optional[np.ndarray] = None
    post: Optional[np.ndarray] = None
    group: Optional[np.ndarray] = None
    covariates: Optional[np.ndarray] = None
    cluster: Optional[np.ndarray] = None
    covariate_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float).ravel()
        n = y.shape[0]
        if n == 0:
            raise EmptyDataset("dataset has no rows")
        bad = ~np.isfinite(y)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonNumericCell("outcome", i, y[i])
        neg = y < 0
        if neg.any():
            i = int(np.flatnonzero(neg)[0])
            raise NegativeOutcome(i, float(y[i]))
        object.__setattr__(self, "outcome", _frozen(y))

        for name in ("treatment", "instrument", "post", "group"):
            col = getattr(self, name)
            if col is None:
                continue
            col = np.asarray(col, dtype=float).ravel()
            if col.shape[0] != n:
                raise InputError(f"column {name!r} has {col.shape[0]} rows, expected {n}")
            if not np.isfinite(col).all():
                i = int(np.flatnonzero(~np.isfinite(col))[0])
                raise NonNumericCell(name, i, col[i])
            object.__setattr__(self, name, _frozen(col))

        cov = self.covariates
        if cov is None:
            cov = np.empty((n, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != n:
            raise InputError(f"covariates have {cov.shape[0]} rows, expected {n}")
        if not np.isfinite(cov).all():
            raise NonNumericCell("covariate", int(np.flatnonzero(~np.isfinite(cov).all(1))[0]), "nan")
        object.__setattr__(self, "covariates", _frozen(cov))
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise InputError("covariate_names does not match covariate columns")
        object.__setattr__(self, "covariate_names", names)

        if self.cluster is not None:
            ids = np.asarray(self.cluster).ravel()
            if ids.shape[0] != n:
                raise InputError(f"cluster has {ids.shape[0]} rows, expected {n}")
            object.__setattr__(self, "cluster", _frozen(dense_ids(ids)))

    @property
    def row_count(self) -> int:
        return self.outcome.shape[0]

    def __len__(self):
        return self.row_count

    @property
    def n_clusters(self) -> int:
        return 0 if self.cluster is None else int(self.cluster.max()) + 1

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def take(self, rows, cluster=None) -> "Dataset":
        """Row subset (with repetition allowed), optionally relabelling clusters."""
        rows = np.asarray(rows, dtype=np.intp)
        pick = lambda a: None if a is None else a[rows]
        if cluster is None:
            cluster = pick(self.cluster)
        return Dataset(
            outcome=self.outcome[rows],
            treatment=self.treatment[rows],
            instrument=pick(self.instrument),
            post=pick(self.post),
            group=pick(self.group),
            covariates=self.covariates[rows],
            cluster=cluster,
            covariate_names=self.covariate_names,
        )

    def covariate(self, which) -> np.ndarray:
        if isinstance(which, str):
            try:
                which = self.covariate_names.index(which)
            except ValueError:
                raise MissingColumn(which) from None
        return self.covariates[:, which]

    def equals(self, other: "Dataset") -> bool:
        """Exact, cell-by-cell equality."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)
        return all(
            same(getattr(self, f), getattr(other, f))
            for f in ("outcome", "treatment", "instrument", "post", "group", "covariates", "cluster")
        ) and self.covariate_names == other.covariate_names


def dense_ids(ids) -> np.ndarray:
    """Map arbitrary labels to 0..G-1 in order of first appearance."""
    ids = np.asarray(ids)
    try:
        _, first, inverse = np.unique(ids, return_index=True, return_inverse=True)
    except TypeError:
        mapping = {}
        out = np.empty(len(ids), dtype=np.int64)
        for i, v in enumerate(ids):
            out[i] = mapping.setdefault(v, len(mapping))
        return out
    rank = np.empty(first.shape[0], dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.shape[0])
    return rank[inverse.ravel()]


def require_binary(col: Optional[np.ndarray], name: str) -> np.ndarray:
    if col is None:
        raise MissingColumn(name)
    if not np.isin(col, (0.0, 1.0)).all():
        raise NotBinary(name)
    return col


def require_clusters(d: Dataset) -> np.ndarray:
    if d.cluster is None:
        raise MissingColumn("cluster")
    if d.n_clusters < 2:
        raise TooFewClusters(f"clustered inference needs at least 2 clusters, got {d.n_clusters}")
    return d.cluster


def clusters_for(d: Dataset, vcov: str):
    """Cluster ids to hand to a fit when ``vcov == "cluster"``, else None."""
    if vcov == "cluster":
        return require_clusters(d)
    return None


def rescale_outcome(d: Dataset, a: float) -> Dataset:
    """Change the units of the outcome by a factor ``a``."""
    a = float(a)
    if not (a > 0 and math.isfinite(a)):
        raise NonPositiveScale(f"scale must be positive and finite, got {a!r}")
    if a == 1.0:
        return d
    return d.replace(outcome=d.outcome * a)


def min_positive_outcome(d: Dataset) -> float:
    pos = d.outcome[d.outcome > 0]
    if pos.size == 0:
        raise NoPositiveOutcomes("no positive outcomes")
    return float(pos.min())


@dataclass(frozen=True)
class ColumnSpec:
    """Map from CSV header names to dataset roles.

    ``roles`` maps each header to one role in :data:`ROLES`.  A header may
    appear only once, so each column has at most one role.
    """

    roles: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, role in self.roles.items():
            if role not in ROLES:
                raise InputError(f"unknown role {role!r} for column {name!r}")
        for role in ("outcome", "treatment"):
            n = sum(r == role for r in self.roles.values())
            if n != 1:
                raise InputError(f"exactly one {role!r} column required, got {n}")
        for role in ("instrument", "post", "group", "cluster"):
            if sum(r == role for r in self.roles.values()) > 1:
                raise InputError(f"at most one {role!r} column allowed")

    @classmethod
    def from_roles(cls, outcome, treatment, instrument=None, post=None, group=None,
                   covariates: Sequence[str] = (), cluster=None) -> "ColumnSpec":
        roles = {}
        for role, name in (("outcome", outcome), ("treatment", treatment),
                           ("instrument", instrument), ("post", post),
                           ("group", group), ("cluster", cluster)):
            if name is not None:
                if name in roles:
                    raise InputError(f"column {name!r} assigned to two roles")
                roles[name] = role
        for name in covariates:
            if name in roles:
                raise InputError(f"column {name!r} assigned to two roles")
            roles[name] = "covariate"
        return cls(roles)

    def column_for(self, role):
        for name, r in self.roles.items():
            if r == role:
                return name
        return None

    @property
    def covariates(self):
        return [name for name, r in self.roles.items() if r == "covariate"]


def load_csv(path, spec: ColumnSpec) -> Dataset:
    """Read a comma-delimited UTF-8 CSV with a header row.

    Every referenced cell must parse as a decimal number, except cluster ids
    which are arbitrary strings.  Rows with missing cells are an error.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        # leading '#' lines carry provenance written by write_csv
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        header = [h.strip() for h in header]
        index = {}
        for name in spec.roles:
            if name not in header:
                raise MissingColumn(name)
            index[name] = header.index(name)
        rows = list(reader)

    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyDataset(f"{path} has a header but no data rows")

    numeric = {}
    cluster_labels = None
    for name, role in spec.roles.items():
        j = index[name]
        if role == "cluster":
            labels = []
            for i, r in enumerate(rows):
                cell = r[j].strip() if j < len(r) else ""
                if cell == "":
                    raise NonNumericCell(name, i, cell)
                labels.append(cell)
            cluster_labels = labels
            continue
        vals = np.empty(len(rows))
        for i, r in enumerate(rows):
            cell = r[j].strip() if j < len(r) else ""
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(name, i, cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(name, i, cell)
            if role == "outcome" and v < 0:
                raise NegativeOutcome(i, cell)
            vals[i] = v
        numeric[name] = vals

    col = lambda role: numeric.get(spec.column_for(role))
    cov_names = spec.covariates
    cov = np.column_stack([numeric[c] for c in cov_names]) if cov_names else None
    return Dataset(
        outcome=col("outcome"),
        treatment=col("treatment"),
        instrument=col("instrument"),
        post=col("post"),
        group=col("group"),
        covariates=cov,
        cluster=cluster_labels,
        covariate_names=tuple(cov_names),
    )


def write_csv(d: Dataset, path, extra: Optional[Mapping[str, np.ndarray]] = None,
              header_lines: Sequence[str] = ()) -> None:
    """Write a dataset in the format :func:`load_csv` reads."""
    cols = {"outcome": d.outcome, "treatment": d.treatment}
    for name in ("instrument", "post", "group"):
        if getattr(d, name) is not None:
            cols[name] = getattr(d, name)
    for j, name in enumerate(d.covariate_names):
        cols[name] = d.covariates[:, j]
    if d.cluster is not None:
        cols["cluster"] = d.cluster
    for k, v in (extra or {}).items():
        cols[k] = np.asarray(v)
    names = list(cols)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(d.row_count):
            w.writerow([_fmt(cols[k][i]) for k in names])


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)
