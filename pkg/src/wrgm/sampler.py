"""Blocked-collapsed Gibbs sampler for repulsive Gaussian mixtures.

Mixture weights are integrated out through the exchangeable partition
distribution. Each sweep

1. reassigns every point in turn, offering the occupied clusters and
   ``n_aux`` fresh auxiliary components drawn from the base measure; the
   weight of opening a new cluster carries the partition coefficient ratio,
   the repulsion ratio ``h(C + a) / h(C)`` and the estimated ``Z_t / Z_{t+1}``;
2. updates each occupied component's covariance, then its mean, with
   Metropolis-Hastings steps whose proposals are the non-repulsive conjugate
   full conditionals, so the acceptance ratio is a ratio of repulsions.

``repulsion_metric="none"`` turns this into an ordinary MFM collapsed sampler.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from . import _kernels as K
from .errors import ArgumentError, ConfigError, NumericError
from .gaussian import GaussianComponent, log_pdf_many
from .priors import (
    LogZCache,
    PriorHyperparams,
    log_repulsion,
    log_repulsive_prior_unnorm,
    log_vn_table,
    sample_base_arrays,
)
from .rng import (
    RngStream,
    sample_dirichlet_alpha,
    sample_trunc_inv_gamma_diag_batch,
    sample_trunc_inv_wishart_batch,
)

log = logging.getLogger(__name__)

INIT_MODES = ("single", "kmeans")


@dataclass(frozen=True)
class SamplerConfig:
    """Schedule and model settings for one chain.

    ``init="single"`` starts with every point in one cluster; ``"kmeans"``
    (default) starts from a seeded k-means partition into ``init_clusters``
    groups. Single-point Gibbs moves almost never open a cluster next to a
    large one, so the single-cluster start is kept for tests and diagnostics.
    """

    n_iter: int = 15_000
    burn_in: int = 10_000
    thinning: int = 2
    n_aux: int = 3
    zk_draws: int = 20_000
    max_rejects: int = 100
    prior: PriorHyperparams = field(default_factory=PriorHyperparams)
    seed: int = 0
    init: str = "kmeans"
    init_clusters: int = 10

    def __post_init__(self):
        for name in ("n_iter", "thinning", "n_aux", "zk_draws", "max_rejects", "init_clusters"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"must be a positive integer, got {v!r}", field=name)
        if not isinstance(self.burn_in, (int, np.integer)) or self.burn_in < 0:
            raise ConfigError(f"must be a non-negative integer, got {self.burn_in!r}",
                              field="burn_in")
        if self.burn_in >= self.n_iter:
            raise ConfigError(f"must be < n_iter={self.n_iter}, got {self.burn_in}",
                              field="burn_in")
        if self.zk_draws < 100:
            raise ConfigError(f"must be >= 100, got {self.zk_draws}", field="zk_draws")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"must be an unsigned 64-bit integer, got {self.seed!r}",
                              field="seed")
        if self.init not in INIT_MODES:
            raise ConfigError(f"must be one of {INIT_MODES}", field="init")
        if not isinstance(self.prior, PriorHyperparams):
            raise ConfigError("must be a PriorHyperparams", field="prior")

    @property
    def n_samples(self):
        return (self.n_iter - self.burn_in) // self.thinning

    def to_dict(self):
        d = asdict(self)
        d["prior"] = self.prior.to_dict()
        return d


@dataclass
class MixtureState:
    """Mutable sampler state. Component arrays have spare capacity beyond ``t``."""

    data: np.ndarray
    z: np.ndarray
    counts: np.ndarray
    t: int
    means: np.ndarray
    covs: np.ndarray
    sqrts: np.ndarray
    chols: np.ndarray
    logdets: np.ndarray
    dist: np.ndarray
    log_repulsion: float
    cfg: SamplerConfig
    log_v: np.ndarray
    log_z: LogZCache
    log_z_arr: np.ndarray
    sweep_index: int = 0
    stats: dict = field(default_factory=lambda: {
        "cov_proposals": 0, "cov_accepts": 0,
        "mean_proposals": 0, "mean_accepts": 0,
        "trunc_failures": 0,
    })

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def p(self):
        return self.data.shape[1]

    @property
    def assignments(self):
        return self.z.copy()

    @property
    def occupied_counts(self):
        return self.counts[: self.t].copy()

    @property
    def components(self):
        return [GaussianComponent(self.means[k], self.covs[k]) for k in range(self.t)]

    def copy(self):
        arrays = {name: getattr(self, name).copy() for name in
                  ("z", "counts", "means", "covs", "sqrts", "chols", "logdets", "dist")}
        return MixtureState(
            data=self.data, t=self.t, log_repulsion=self.log_repulsion, cfg=self.cfg,
            log_v=self.log_v, log_z=self.log_z, log_z_arr=self.log_z_arr,
            sweep_index=self.sweep_index, stats=dict(self.stats), **arrays,
        )

    def check_invariants(self, atol=1e-9):
        """Raise ``AssertionError`` if counts, assignments or caches disagree."""
        t = self.t
        assert np.all((self.z >= 0) & (self.z < t)), "assignment out of range"
        assert np.array_equal(np.bincount(self.z, minlength=t), self.counts[:t]), \
            "counts disagree with assignments"
        assert np.all(self.counts[:t] > 0), "empty occupied cluster"
        fresh = log_repulsion(self.components, self.cfg.prior)
        if math.isfinite(fresh) or math.isfinite(self.log_repulsion):
            assert abs(fresh - self.log_repulsion) < atol, \
                f"log_repulsion cache drift {fresh} vs {self.log_repulsion}"


def _alloc(n_cap, p):
    return dict(
        counts=np.zeros(n_cap, dtype=np.int64),
        means=np.zeros((n_cap, p)),
        covs=np.tile(np.eye(p), (n_cap, 1, 1)),
        sqrts=np.tile(np.eye(p), (n_cap, 1, 1)),
        chols=np.tile(np.eye(p), (n_cap, 1, 1)),
        logdets=np.zeros(n_cap),
        dist=np.zeros((n_cap, n_cap)),
    )


def _grow(state, new_cap):
    old = state.means.shape[0]
    fresh = _alloc(new_cap, state.p)
    for name, arr in fresh.items():
        cur = getattr(state, name)
        if name == "dist":
            arr[:old, :old] = cur
        else:
            arr[:old] = cur
        setattr(state, name, arr)


def _ensure_log_z(state, t_needed):
    """Make ``state.log_z_arr`` cover indices up to ``t_needed``."""
    arr = state.log_z_arr
    if arr.shape[0] > t_needed:
        return
    if state.cfg.prior.repulsion_metric == "none":
        state.log_z_arr = np.zeros(max(t_needed + 1, state.n + 2))
        return
    state.log_z_arr = state.log_z.table(t_needed + 1)


def _factor(cov):
    """``(sqrt, chol, logdet)`` of one covariance."""
    sq, ch, ld, _, _ = K.batch_factorize(np.ascontiguousarray(cov, dtype=float)[None])
    if not np.isfinite(ld[0]):
        raise NumericError("covariance is not positive definite", payload=cov)
    return sq[0], ch[0], ld[0]


def _set_component(state, k, mean, cov, fac=None):
    sq, chol, logdet = _factor(cov) if fac is None else fac
    state.means[k] = mean
    state.covs[k] = cov
    state.sqrts[k] = sq
    state.chols[k] = chol
    state.logdets[k] = logdet


def _refresh_log_repulsion(state):
    pr = state.cfg.prior
    state.log_repulsion = float(K.log_h_from_dist(state.dist, state.t, pr.kind_code,
                                                  pr.metric_code, pr.g0))


def _rebuild_dist(state):
    pr = state.cfg.prior
    t = state.t
    state.dist[:, :] = 0.0
    for k in range(t):
        row = K.dist_row(pr.metric_code, state.means[k], state.sqrts[k], state.covs[k],
                         state.means, state.covs, t, k)
        state.dist[k, :t] = row
    # symmetric by construction of W2; average away round-off asymmetry
    sub = state.dist[:t, :t]
    state.dist[:t, :t] = 0.5 * (sub + sub.T)
    _refresh_log_repulsion(state)


def _draw_cov_conditional(prior, scatter, n_k, p, rng, max_rejects):
    psi = prior.psi(p)
    if prior.covariance_shape == "diagonal":
        shape = prior.diag_ig_shape(p) + 0.5 * n_k
        scale = 0.5 * (np.diag(psi) + np.diag(scatter))
        return sample_trunc_inv_gamma_diag_batch(shape, scale, prior.eig_lo, prior.eig_hi,
                                                 1, rng.gen, max_rejects)[0]
    return sample_trunc_inv_wishart_batch(psi + scatter, prior.iw_dof + n_k, prior.eig_lo,
                                          prior.eig_hi, 1, rng.gen, max_rejects)[0]


def _mean_conditional(prior, cov, y_sum, n_k):
    """Moments of the Gaussian full conditional of a mean given its covariance."""
    p = cov.shape[0]
    prec_lik = np.linalg.inv(cov)
    prec = np.eye(p) / prior.mean_scale**2 + n_k * prec_lik
    post_cov = np.linalg.inv(prec)
    post_cov = 0.5 * (post_cov + post_cov.T)
    post_mean = post_cov @ (prec_lik @ y_sum)
    return post_mean, post_cov


def _draw_mean_conditional(prior, cov, y_sum, n_k, rng):
    mu, v = _mean_conditional(prior, cov, y_sum, n_k)
    return mu + np.linalg.cholesky(v) @ rng.gen.standard_normal(mu.shape[0])


def _kmeans_labels(data, k, rng, n_rounds=50):
    """Seeded k-means++ / Lloyd partition used only for initialization."""
    gen = rng.gen
    n = data.shape[0]
    k = min(k, n)
    centers = [data[gen.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        if d2.sum() <= 0:
            break
        centers.append(data[gen.choice(n, p=d2 / d2.sum())])
        d2 = np.minimum(d2, np.sum((data - centers[-1]) ** 2, axis=1))
    c = np.array(centers)
    labels = np.zeros(n, dtype=np.int64)
    for r in range(n_rounds):
        new = np.argmin(((data[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        if r > 0 and np.array_equal(new, labels):
            break
        labels = new
        for j in range(c.shape[0]):
            if np.any(labels == j):
                c[j] = data[labels == j].mean(axis=0)
    _, labels = np.unique(labels, return_inverse=True)
    return labels.astype(np.int64)


def init_state(data, cfg: SamplerConfig, rng: RngStream) -> MixtureState:
    """Initial state drawn from the non-repulsive conjugate conditionals.

    With ``cfg.init == "single"`` all points share one cluster.
    """
    y = np.asarray(getattr(data, "points", data), dtype=float)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ArgumentError("data must be a non-empty n x p matrix")
    if not np.all(np.isfinite(y)):
        raise ArgumentError("data contains non-finite values")
    n, p = y.shape
    prior = cfg.prior
    prior.check_dim(p)
    if cfg.init == "kmeans":
        labels = _kmeans_labels(y, cfg.init_clusters, rng)
    else:
        labels = np.zeros(n, dtype=np.int64)
    t = int(labels.max()) + 1
    cap = max(8, 2 * t)
    arrays = _alloc(cap, p)
    log_z = LogZCache(prior, p, cfg.zk_draws,
                      np.random.SeedSequence(rng.seed, spawn_key=rng.spawn_key + (0x5A4B,)))
    state = MixtureState(
        data=y, z=labels.copy(), t=t, log_repulsion=0.0, cfg=cfg,
        log_v=log_vn_table(n, prior), log_z=log_z, log_z_arr=np.zeros(1), **arrays,
    )
    state.counts[:t] = np.bincount(labels, minlength=t)
    for k in range(t):
        yk = y[labels == k]
        centered = yk - yk.mean(axis=0)
        cov = _draw_cov_conditional(prior, centered.T @ centered, yk.shape[0], p, rng,
                                    cfg.max_rejects)
        mean = _draw_mean_conditional(prior, cov, yk.sum(axis=0), yk.shape[0], rng)
        _set_component(state, k, mean, cov)
    _rebuild_dist(state)
    _ensure_log_z(state, t + 2)
    return state


def _draw_aux(state, count, rng):
    prior = state.cfg.prior
    p = state.p
    n_aux = state.cfg.n_aux
    means, covs = sample_base_arrays(prior, p, count * n_aux, rng.gen, state.cfg.max_rejects)
    sqrts, chols, logdets, _, _ = K.batch_factorize(covs)
    if not np.all(np.isfinite(logdets)):
        raise NumericError("auxiliary covariance draw is not positive definite")
    shape = (count, n_aux)
    return (means.reshape(shape + (p,)), covs.reshape(shape + (p, p)),
            sqrts.reshape(shape + (p, p)), chols.reshape(shape + (p, p)),
            logdets.reshape(shape))


def _run_assign(state, i_start, i_end, aux, u):
    prior = state.cfg.prior
    i = i_start
    while True:
        i, t, status = K.assign_points(
            state.data, state.z, state.counts, state.t, state.means, state.covs,
            state.sqrts, state.chols, state.logdets, state.dist, i, i_end,
            *aux, u, prior.dirichlet_beta, state.log_v, state.log_z_arr,
            prior.metric_code, prior.kind_code, prior.g0,
        )
        state.t = int(t)
        if status == K.STATUS_DONE:
            break
        if status == K.STATUS_NEED_CAPACITY:
            _grow(state, 2 * state.means.shape[0])
        elif status == K.STATUS_NEED_LOGZ:
            _ensure_log_z(state, state.t + 2)
    _refresh_log_repulsion(state)


def update_assignment(state: MixtureState, i, rng: RngStream, aux=None) -> MixtureState:
    """Reassign point ``i`` (in place; the state is also returned).

    ``aux`` optionally fixes the auxiliary components as a list of
    ``GaussianComponent`` (length ``n_aux``); otherwise they are drawn from the
    base measure.
    """
    if not 0 <= i < state.n:
        raise ArgumentError(f"data index {i} out of range for n={state.n}")
    n, p, n_aux = state.n, state.p, state.cfg.n_aux
    if aux is None:
        drawn = _draw_aux(state, 1, rng)
    else:
        if len(aux) != n_aux:
            raise ArgumentError(f"expected {n_aux} auxiliary components, got {len(aux)}")
        drawn = (
            np.array([[c.mean for c in aux]]),
            np.array([[c.cov for c in aux]]),
            np.array([[c.cov_sqrt for c in aux]]),
            np.array([[c.chol for c in aux]]),
            np.array([[c.log_det for c in aux]]),
        )
    full = (
        np.zeros((n, n_aux, p)), np.zeros((n, n_aux, p, p)), np.zeros((n, n_aux, p, p)),
        np.zeros((n, n_aux, p, p)), np.zeros((n, n_aux)),
    )
    for dst, src in zip(full, drawn):
        dst[i] = src[0]
    u = np.zeros(n)
    u[i] = rng.gen.random()
    _run_assign(state, i, i + 1, full, u)
    return state


def update_component_params(state: MixtureState, k, rng: RngStream) -> MixtureState:
    """Metropolis-Hastings refresh of cluster ``k``: covariance step, then mean step.

    Each step proposes from the non-repulsive conjugate full conditional and
    accepts with probability ``min(1, h(proposed) / h(current))``.
    """
    if not 0 <= k < state.t:
        raise ArgumentError(f"cluster {k} is not occupied (t={state.t})")
    idx = np.flatnonzero(state.z == k)
    _update_component(state, k, state.data[idx], rng)
    return state


def component_log_accept(state, k, mean, cov, cov_sqrt=None):
    """``(log acceptance probability, new distance row)`` for replacing component ``k``."""
    pr = state.cfg.prior
    if pr.repulsion_metric == "none" or state.t < 2:
        return 0.0, None
    cov_sqrt = _factor(cov)[0] if cov_sqrt is None else cov_sqrt
    row = K.dist_row(pr.metric_code, np.asarray(mean, float), cov_sqrt, np.asarray(cov, float),
                     state.means, state.covs, state.t, k)
    new = K.log_h_replace_row(state.dist, state.t, k, row, pr.kind_code, pr.metric_code, pr.g0)
    return min(0.0, new - state.log_repulsion), row


def _accept_step(state, k, mean, cov, rng):
    pr = state.cfg.prior
    fac = _factor(cov)
    u = rng.gen.random()
    if pr.repulsion_metric == "none" or state.t < 2:
        _set_component(state, k, mean, cov, fac)
        return True
    log_a, row = component_log_accept(state, k, mean, cov, fac[0])
    if u == 0.0 or math.log(u) < log_a:
        _set_component(state, k, mean, cov, fac)
        state.dist[k, : state.t] = row
        state.dist[: state.t, k] = row
        state.dist[k, k] = 0.0
        _refresh_log_repulsion(state)
        return True
    return False


def _update_component(state, k, yk, rng):
    pr = state.cfg.prior
    n_k, p = yk.shape
    st = state.stats
    mean = state.means[k].copy()
    centered = yk - mean
    try:
        cov_new = _draw_cov_conditional(pr, centered.T @ centered, n_k, p, rng,
                                        state.cfg.max_rejects)
    except NumericError:
        st["trunc_failures"] += 1
    else:
        st["cov_proposals"] += 1
        st["cov_accepts"] += _accept_step(state, k, mean, cov_new, rng)
    cov = state.covs[k].copy()
    mean_new = _draw_mean_conditional(pr, cov, yk.sum(axis=0), n_k, rng)
    st["mean_proposals"] += 1
    st["mean_accepts"] += _accept_step(state, k, mean_new, cov, rng)


def update_all_components(state, rng):
    order = np.argsort(state.z, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(state.counts[: state.t])])
    for k in range(state.t):
        _update_component(state, k, state.data[order[bounds[k]:bounds[k + 1]]], rng)


def gibbs_sweep(state: MixtureState, rng: RngStream, update_assignments=True) -> MixtureState:
    """One pass of assignment updates over all points, then all component updates."""
    if update_assignments:
        aux = _draw_aux(state, state.n, rng)
        u = rng.gen.random(state.n)
        _run_assign(state, 0, state.n, aux, u)
    update_all_components(state, rng)
    state.sweep_index += 1
    return state


def log_partition_prior(counts, n, t, log_v, beta):
    counts = np.asarray(counts, dtype=float)
    return float(log_v[t] + np.sum(gammaln(counts + beta) - gammaln(beta)))


def log_joint(state: MixtureState, cfg: SamplerConfig = None, cached_log_ZK=None) -> float:
    """Joint log-density of data, partition and occupied components.

    ``cached_log_ZK`` maps ``t`` to ``log Z_t``; it defaults to the state's cache.
    """
    cfg = state.cfg if cfg is None else cfg
    t = state.t
    if cached_log_ZK is None:
        log_zt = state.log_z.get(t)
    else:
        try:
            log_zt = cached_log_ZK[t]
        except (KeyError, IndexError):
            raise NumericError(f"log Z cache has no entry for t={t}") from None
    comps = state.components
    loglik = 0.0
    for k, c in enumerate(comps):
        loglik += float(np.sum(log_pdf_many(c, state.data[state.z == k])))
    lp_part = log_partition_prior(state.counts[:t], state.n, t, state.log_v,
                                  cfg.prior.dirichlet_beta)
    lp_comp = log_repulsive_prior_unnorm(comps, cfg.prior)
    return loglik + lp_part + lp_comp - log_zt


@dataclass
class ChainSample:
    sweep: int
    t: int
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    assignments: np.ndarray
    log_joint: float

    @property
    def components(self):
        return [GaussianComponent(m, s) for m, s in zip(self.means, self.covs)]


@dataclass
class Chain:
    samples: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @property
    def log_joints(self):
        return np.array([s.log_joint for s in self.samples])

    @property
    def ks(self):
        return np.array([s.t for s in self.samples])


def _rates(stats):
    def ratio(a, b):
        return stats[a] / stats[b] if stats[b] else None

    return {
        "cov_acceptance": ratio("cov_accepts", "cov_proposals"),
        "mean_acceptance": ratio("mean_accepts", "mean_proposals"),
        **stats,
    }


def _zk_meta(state):
    cache = state.log_z.values
    ts = sorted(cache)
    sens = {}
    for t in ts:
        if t + 1 in cache:
            sens[str(t)] = math.hypot(cache[t][1], cache[t + 1][1])
    return {
        "zk_draws": state.cfg.zk_draws,
        "log_ZK": state.log_z.summary(),
        "creation_log_ratio_se": sens,
        "note": "log(Z_t / Z_{t+1}) in cluster-creation weights is a Monte-Carlo estimate",
    }


def run_chain(data, cfg: SamplerConfig, rng: RngStream = None, callback=None) -> Chain:
    """Run one chain and return its retained post-burn-in samples.

    Weights are rematerialized per retained sample by a Dirichlet(beta + counts)
    draw from a dedicated child stream.
    """
    rng = RngStream(cfg.seed) if rng is None else rng
    sweep_rng, weight_rng = rng.split(2)
    t0 = time.perf_counter()
    state = init_state(data, cfg, sweep_rng)
    beta = cfg.prior.dirichlet_beta
    samples = []
    for it in range(1, cfg.n_iter + 1):
        gibbs_sweep(state, sweep_rng)
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
            t = state.t
            w = sample_dirichlet_alpha(beta + state.counts[:t], weight_rng)
            samples.append(ChainSample(
                sweep=it, t=t, weights=w, means=state.means[:t].copy(),
                covs=state.covs[:t].copy(), assignments=state.z.copy(),
                log_joint=log_joint(state),
            ))
        if callback is not None:
            callback(it, state)
        if it % 1000 == 0:
            log.debug("sweep %d: t=%d log_repulsion=%.4g", it, state.t, state.log_repulsion)
    meta = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "n_samples": len(samples),
        "repulsion": cfg.prior.repulsion_metric,
        "repulsion_enabled": cfg.prior.repulsion_metric != "none",
        "acceptance": _rates(state.stats),
        "zk": _zk_meta(state),
        "wall_clock_s": time.perf_counter() - t0,
    }
    return Chain(samples=samples, meta=meta)
