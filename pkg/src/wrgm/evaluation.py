"""Posterior summaries computed from a recorded chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import comb, logsumexp

from .errors import ArgumentError, NumericError
from .gaussian import LOG_2PI, w2_squared


@dataclass
class DensityGrid:
    axes: list
    values: np.ndarray

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class EvalReport:
    log_cpo: float
    map_sample_index: int
    min_mean_dist: np.ndarray
    min_w2_dist: np.ndarray
    k_posterior: dict
    ari: float | None = None
    extra: dict = field(default_factory=dict)


def _parts(sample):
    """(weights, means, covs) from a chain sample or a true mixture."""
    if hasattr(sample, "means"):
        return (np.asarray(sample.weights, float), np.asarray(sample.means, float),
                np.asarray(sample.covs, float))
    comps = sample.components
    return (np.asarray(sample.weights, float), np.array([c.mean for c in comps]),
            np.array([c.cov for c in comps]))


def log_mixture_density_many(weights, means, covs, ys):
    """``log sum_k w_k phi(y | m_k, S_k)`` for each row of ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    p = means.shape[1]
    if ys.shape[1] != p:
        raise ArgumentError(f"points have dimension {ys.shape[1]}, mixture has {p}")
    out = np.empty((means.shape[0], ys.shape[0]))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for k in range(means.shape[0]):
        chol = np.linalg.cholesky(covs[k])
        zk = solve_triangular(chol, (ys - means[k]).T, lower=True, check_finite=False)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[k] = log_w[k] - 0.5 * (p * LOG_2PI + log_det) - 0.5 * np.sum(zk * zk, axis=0)
    return logsumexp(out, axis=0)


def mixture_density(sample, y) -> float:
    """Density of a single point under a recorded sample (or a true mixture)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w, m, s = _parts(sample)
    if y.ndim != 1 or y.shape[0] != m.shape[1]:
        raise ArgumentError(f"point has shape {y.shape}, mixture dimension is {m.shape[1]}")
    return float(np.exp(log_mixture_density_many(w, m, s, y[None, :])[0]))


def mixture_density_many(sample, ys):
    w, m, s = _parts(sample)
    return np.exp(log_mixture_density_many(w, m, s, ys))


def _samples(chain):
    samples = getattr(chain, "samples", chain)
    if len(samples) == 0:
        raise ArgumentError("chain has no samples")
    return samples


def default_grid_axes(points, resolution=128, pad=0.1):
    points = np.atleast_2d(points)
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return [np.linspace(a - pad * s, b + pad * s, resolution) for a, b, s in zip(lo, hi, span)]


def posterior_mean_density(chain, grid_axes) -> DensityGrid:
    """Average mixture density over all recorded samples on a tensor grid."""
    samples = _samples(chain)
    axes = [np.sort(np.asarray(a, dtype=float)) for a in grid_axes]
    grid = DensityGrid(axes=axes, values=np.zeros(tuple(a.size for a in axes)))
    pts = grid.points()
    acc = np.zeros(pts.shape[0])
    for s in samples:
        acc += mixture_density_many(s, pts)
    grid.values = (acc / len(samples)).reshape(grid.values.shape)
    return grid


def log_density_matrix(chain, data):
    """``L[j, i] = log p(y_i | theta_j)``."""
    samples = _samples(chain)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    out = np.empty((len(samples), data.shape[0]))
    for j, s in enumerate(samples):
        w, m, c = _parts(s)
        out[j] = log_mixture_density_many(w, m, c, data)
    return out


def log_cpo(chain, data) -> float:
    """Log conditional predictive ordinate (sum of log harmonic-mean densities)."""
    data = getattr(data, "points", data)
    ll = log_density_matrix(chain, data)
    bad = np.argwhere(~np.isfinite(ll) | (ll == -np.inf))
    if bad.size:
        j, i = bad[0]
        raise NumericError(f"predictive density of datum {i} under sample {j} is zero",
                           payload=(int(i), int(j)))
    n_mc = ll.shape[0]
    return float(-np.sum(logsumexp(-ll, axis=0) - math.log(n_mc)))


def map_sample(chain) -> int:
    """Index of the sample with the largest log joint (first one on ties)."""
    scores = np.array([s.log_joint for s in _samples(chain)], dtype=float)
    return int(np.argmax(scores))


def _min_pair(sample, metric):
    means = np.asarray(sample.means)
    k = means.shape[0]
    if k < 2:
        return math.inf
    if metric == "mean_euclidean":
        diff = means[:, None, :] - means[None, :, :]
        d = np.sqrt(np.sum(diff**2, axis=-1))
        return float(np.min(d[np.triu_indices(k, 1)]))
    if metric == "wasserstein":
        comps = sample.components
        return float(min(math.sqrt(w2_squared(comps[a], comps[b]))
                         for a in range(k) for b in range(a + 1, k)))
    raise ArgumentError(f"unknown metric {metric!r}")


def min_pairwise(chain, metric="mean_euclidean") -> np.ndarray:
    """Per-sample minimum pairwise distance; ``inf`` marks single-component samples."""
    return np.array([_min_pair(s, metric) for s in getattr(chain, "samples", chain)])


def finite_summary(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"count": 0}
    return {"count": int(v.size), "median": float(np.median(v)), "mean": float(np.mean(v)),
            "q05": float(np.quantile(v, 0.05)), "q95": float(np.quantile(v, 0.95))}


def adjusted_rand(z_a, z_b) -> float:
    """Adjusted Rand index of two labelings (pair-counting form)."""
    z_a = np.asarray(z_a)
    z_b = np.asarray(z_b)
    if z_a.shape != z_b.shape or z_a.ndim != 1:
        raise ArgumentError(f"label vectors must have equal length, got {z_a.shape} and {z_b.shape}")
    n = z_a.size
    _, ia = np.unique(z_a, return_inverse=True)
    _, ib = np.unique(z_b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    index = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def k_posterior(chain):
    ks = np.array([s.t for s in _samples(chain)])
    vals, counts = np.unique(ks, return_counts=True)
    return {int(v): float(c) / ks.size for v, c in zip(vals, counts)}


def evaluate(chain, data, labels=None) -> EvalReport:
    """Assemble the standard report for a chain on its data."""
    points = getattr(data, "points", data)
    if labels is None:
        labels = getattr(data, "labels", None)
    idx = map_sample(chain)
    ari = None
    if labels is not None:
        ari = adjusted_rand(chain.samples[idx].assignments, labels)
    return EvalReport(
        log_cpo=log_cpo(chain, points),
        map_sample_index=idx,
        min_mean_dist=min_pairwise(chain, "mean_euclidean"),
        min_w2_dist=min_pairwise(chain, "wasserstein"),
        k_posterior=k_posterior(chain),
        ari=ari,
    )
