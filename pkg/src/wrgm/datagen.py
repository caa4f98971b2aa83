"""Simulation scenarios, mixture sampling and CSV ingestion."""

from __future__ import annotations

import csv
import logging
import math
import operator
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DataError
from .evaluation import log_mixture_density_many
from .gaussian import GaussianComponent
from .rng import RngStream, sample_trunc_inv_wishart_batch

log = logging.getLogger(__name__)

# Two fixed components sharing the origin as mean, with "crossed" covariances.
FIXED_COVS = (np.diag([1.0, 100.0]), np.diag([100.0, 1.0]))
RANDOM_MEAN_COV = 25.0 * np.eye(2)
RANDOM_IW_SCALE = 10.0 * np.eye(2)
RANDOM_IW_DOF = 5.0


@dataclass
class TrueMixture:
    weights: np.ndarray
    components: list
    provenance: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.components),):
            raise ArgumentError("need one weight per component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ArgumentError(f"weights must lie on the simplex, got {self.weights}")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ArgumentError(f"component dimensions disagree: {sorted(dims)}")

    @property
    def dim(self):
        return self.components[0].dim

    def to_dict(self):
        return {
            "provenance": self.provenance,
            "weights": self.weights.tolist(),
            "means": [c.mean.tolist() for c in self.components],
            "covariances": [c.cov.tolist() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d):
        comps = [GaussianComponent(m, s) for m, s in zip(d["means"], d["covariances"])]
        return cls(weights=d["weights"], components=comps, provenance=d.get("provenance", ""))


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray | None = None
    source: str = ""
    columns: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(self.points)):
            raise DataError("dataset contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise DataError("labels must have one entry per point")
            if self.labels.size and self.labels.min() < 0:
                raise DataError("labels must be non-negative")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def p(self):
        return self.points.shape[1]


def build_sim_scenario(k_s, rng: RngStream) -> TrueMixture:
    """Two fixed crossed components at the origin plus ``k_s`` random ones, equal weights.

    Random components: mean ~ N(0, 25 I), covariance ~ IW(10 I, 5), untruncated.
    """
    if k_s < 0 or int(k_s) != k_s:
        raise ArgumentError(f"K_s must be a non-negative integer, got {k_s}")
    k_s = int(k_s)
    comps = [GaussianComponent(np.zeros(2), c) for c in FIXED_COVS]
    if k_s:
        gen = rng.gen
        means = gen.multivariate_normal(np.zeros(2), RANDOM_MEAN_COV, size=k_s,
                                        method="cholesky")
        covs = sample_trunc_inv_wishart_batch(RANDOM_IW_SCALE, RANDOM_IW_DOF, 0.0, math.inf,
                                              k_s, gen)
        comps += [GaussianComponent(m, s) for m, s in zip(means, covs)]
    k = len(comps)
    return TrueMixture(np.full(k, 1.0 / k), comps, provenance=f"simulation scenario K_s={k_s}")


def sample_mixture(mix: TrueMixture, n, rng: RngStream) -> Dataset:
    """Draw ``n`` labeled points from a mixture."""
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    gen = rng.gen
    labels = gen.choice(len(mix.components), size=n, p=mix.weights)
    z = gen.standard_normal((n, mix.dim))
    means = np.array([c.mean for c in mix.components])
    chols = np.array([c.chol for c in mix.components])
    points = means[labels] + np.einsum("nij,nj->ni", chols[labels], z)
    return Dataset(points, labels.astype(np.int64), source=mix.provenance)


def true_density(mix: TrueMixture, y) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (mix.dim,):
        raise ArgumentError(f"point has shape {y.shape}, mixture dimension is {mix.dim}")
    means = np.array([c.mean for c in mix.components])
    covs = np.array([c.cov for c in mix.components])
    return float(np.exp(log_mixture_density_many(mix.weights, means, covs, y[None])[0]))


_OPS = {
    ">": operator.gt, "<": operator.lt,
    ">=": operator.ge, "<=": operator.le,
    "≥": operator.ge, "≤": operator.le,
}


def parse_filter(text):
    """Parse ``"CD3>300"`` style filters into ``(column, op, threshold)``."""
    for op in (">=", "<=", "≥", "≤", ">", "<"):
        if op in text:
            col, _, thr = text.partition(op)
            try:
                return col.strip(), op, float(thr)
            except ValueError:
                raise ArgumentError(f"bad filter threshold in {text!r}") from None
    raise ArgumentError(f"filter {text!r} needs one of > < >= <=")


def load_csv(path, columns=None, filter=None, label_column=None) -> Dataset:
    """Load a headered comma-separated file of numbers.

    ``filter`` is ``(column, op, threshold)`` and is applied before the column
    projection, so it may name a column that is not kept. ``label_column``,
    if given, is read as integer labels and excluded from the points.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    def col_index(name):
        try:
            return header.index(name)
        except ValueError:
            raise DataError(f"{path}: missing column {name!r}; have {header}") from None

    if columns is None:
        keep = [j for j, h in enumerate(header) if h != label_column]
    else:
        keep = [col_index(c) for c in columns]
    flt = None
    if filter is not None:
        fcol, op, thr = filter
        if op not in _OPS:
            raise ArgumentError(f"unsupported filter operator {op!r}")
        flt = (col_index(fcol), _OPS[op], float(thr))
    lab_idx = col_index(label_column) if label_column is not None else None

    def number(r, j, lineno):
        try:
            return float(r[j])
        except (ValueError, IndexError):
            cell = r[j] if j < len(r) else "<missing>"
            raise DataError(f"{path}: row {lineno}, column {header[j]!r}: "
                            f"cannot parse {cell!r} as a number") from None

    pts, labels = [], []
    for lineno, r in enumerate(rows, start=2):
        if flt is not None and not flt[1](number(r, flt[0], lineno), flt[2]):
            continue
        pts.append([number(r, j, lineno) for j in keep])
        if lab_idx is not None:
            labels.append(int(number(r, lab_idx, lineno)))
    if not pts:
        raise DataError(f"{path}: no rows left after filtering ({len(rows)} read)")
    log.info("%s: kept %d of %d rows", path, len(pts), len(rows))
    return Dataset(
        np.array(pts), np.array(labels) if lab_idx is not None else None,
        source=f"{path} ({len(pts)} of {len(rows)} rows)",
        columns=[header[j] for j in keep],
    )
