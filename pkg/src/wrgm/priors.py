"""Repulsive prior over mixture components.

The component prior is the product of independent base measures (a centered
Gaussian on each mean, a truncated inverse-Wishart on each covariance)
multiplied by a repulsion function ``h_K`` built from ``g(x) = x / (g0 + x)``
of pairwise squared distances, and divided by the normalizing constant ``Z_K``.
The number of components has a zero-truncated Poisson prior; the partition
coefficients ``V_n(t)`` of the induced exchangeable partition distribution
are provided for the collapsed sampler.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import gammaln, logsumexp, multigammaln

from . import _kernels as K
from .errors import ArgumentError, ConfigError, NumericError
from .gaussian import LOG_2PI, GaussianComponent, w2_squared
from .rng import (
    RngStream,
    sample_trunc_inv_gamma_diag_batch,
    sample_trunc_inv_wishart_batch,
)

REPULSION_KINDS = ("min", "geometric_mean")
REPULSION_METRICS = ("wasserstein", "mean_euclidean", "none")
COVARIANCE_SHAPES = ("full", "diagonal")

VN_TAIL_RTOL = 1e-12
VN_MAX_TERMS = 100_000


@dataclass(frozen=True)
class PriorHyperparams:
    """Hyperparameters of the repulsive mixture prior.

    Defaults are the simulation-study settings: beta=1, tau=100, Psi=I, nu=3,
    eigenvalue bounds (1e-12, 1e12), lambda=1, g0=5, min-type repulsion.

    ``iw_scale=None`` means the identity of whatever dimension the data has.
    """

    dirichlet_beta: float = 1.0
    mean_scale: float = 100.0
    iw_scale: tuple | None = None
    iw_dof: float = 3.0
    eig_lo: float = 1e-12
    eig_hi: float = 1e12
    poisson_lambda: float = 1.0
    g0: float = 5.0
    repulsion_kind: str = "min"
    repulsion_metric: str = "wasserstein"
    covariance_shape: str = "full"

    def __post_init__(self):
        for name in ("dirichlet_beta", "mean_scale", "iw_dof", "eig_lo", "eig_hi",
                     "poisson_lambda", "g0"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"must be a finite number, got {v!r}", field=name)
            object.__setattr__(self, name, float(v))
            if v <= 0:
                raise ConfigError(f"must be positive, got {v!r}", field=name)
        if self.dirichlet_beta > 1.0:
            raise ConfigError(
                f"must lie in (0, 1] (weakly informative), got {self.dirichlet_beta}",
                field="dirichlet_beta",
            )
        if not self.eig_lo < self.eig_hi:
            raise ConfigError(f"eig_lo={self.eig_lo} must be < eig_hi={self.eig_hi}",
                              field="eig_lo")
        if self.repulsion_kind not in REPULSION_KINDS:
            raise ConfigError(f"must be one of {REPULSION_KINDS}", field="repulsion_kind")
        if self.repulsion_metric not in REPULSION_METRICS:
            raise ConfigError(f"must be one of {REPULSION_METRICS}", field="repulsion_metric")
        if self.covariance_shape not in COVARIANCE_SHAPES:
            raise ConfigError(f"must be one of {COVARIANCE_SHAPES}", field="covariance_shape")
        if self.iw_scale is not None:
            psi = np.asarray(self.iw_scale, dtype=float)
            if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
                raise ConfigError("must be a square matrix", field="iw_scale")
            try:
                np.linalg.cholesky(0.5 * (psi + psi.T))
            except np.linalg.LinAlgError:
                raise ConfigError("must be positive definite", field="iw_scale") from None
            object.__setattr__(self, "iw_scale", tuple(tuple(float(x) for x in r) for r in psi))
            if self.iw_dof <= psi.shape[0] - 1:
                raise ConfigError(f"must exceed p - 1 = {psi.shape[0] - 1}", field="iw_dof")

    def psi(self, p):
        """Inverse-Wishart scale matrix for dimension ``p``."""
        if self.iw_scale is None:
            return np.eye(p)
        psi = np.asarray(self.iw_scale, dtype=float)
        if psi.shape != (p, p):
            raise ArgumentError(f"iw_scale is {psi.shape}, data dimension is {p}")
        return psi

    def check_dim(self, p):
        if self.iw_dof <= p - 1:
            raise ConfigError(f"must exceed p - 1 = {p - 1} for p = {p}", field="iw_dof")
        self.psi(p)

    @property
    def metric_code(self):
        return K.METRIC_CODES[self.repulsion_metric]

    @property
    def kind_code(self):
        return K.KIND_CODES[self.repulsion_kind]

    def diag_ig_shape(self, p):
        """Shape of the inverse-Gamma marginals of the diagonal-restricted IW."""
        return 0.5 * (self.iw_dof + p - 1.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("iw_scale") is not None:
            d["iw_scale"] = tuple(tuple(r) for r in d["iw_scale"])
        return cls(**d)

    def with_(self, **changes):
        return replace(self, **changes)


def g_repulse(x, g0):
    """Monotone map ``x / (g0 + x)`` from [0, inf) onto [0, 1)."""
    if x < 0:
        raise ArgumentError(f"g is defined for x >= 0, got {x}")
    if g0 <= 0:
        raise ArgumentError(f"g0 must be positive, got {g0}")
    return x / (g0 + x)


def pair_sq_dist(a: GaussianComponent, b: GaussianComponent, metric):
    if metric == "wasserstein":
        return w2_squared(a, b)
    if metric == "mean_euclidean":
        dm = a.mean - b.mean
        return float(dm @ dm)
    if metric == "none":
        return 0.0
    raise ArgumentError(f"unknown repulsion metric {metric!r}")


def pairwise_sq_dists(components, metric):
    k = len(components)
    d = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            d[a, b] = d[b, a] = pair_sq_dist(components[a], components[b], metric)
    return d


def repulsion_from_sq_dists(d, h: PriorHyperparams) -> float:
    """Repulsion of K components given their K x K matrix of squared distances."""
    d = np.asarray(d, dtype=float)
    k = d.shape[0]
    if h.repulsion_metric == "none" or k == 1:
        return 1.0
    iu = np.triu_indices(k, 1)
    if np.any(d[iu] < 0):
        raise ArgumentError("squared distances must be non-negative")
    gs = d[iu] / (h.g0 + d[iu])
    if h.repulsion_kind == "min":
        return float(np.min(gs))
    return float(np.prod(gs) ** (1.0 / k))


def repulsion(components, h: PriorHyperparams) -> float:
    """Repulsion ``h_K`` of a component list, in [0, 1]."""
    if len(components) == 0:
        raise ArgumentError("repulsion needs at least one component")
    if h.repulsion_metric == "none" or len(components) == 1:
        return 1.0
    return repulsion_from_sq_dists(pairwise_sq_dists(components, h.repulsion_metric), h)


def log_repulsion(components, h: PriorHyperparams) -> float:
    if len(components) == 0:
        raise ArgumentError("repulsion needs at least one component")
    if h.repulsion_metric == "none" or len(components) == 1:
        return 0.0
    d = pairwise_sq_dists(components, h.repulsion_metric)
    return float(K.log_h_from_dist(d, len(components), h.kind_code, h.metric_code, h.g0))


def _log_mean_prior(m, tau):
    p = m.shape[0]
    return -0.5 * p * (LOG_2PI + 2.0 * math.log(tau)) - 0.5 * float(m @ m) / tau**2


def log_inv_wishart(sigma, psi, nu):
    """Inverse-Wishart log-density."""
    p = sigma.shape[0]
    _, logdet_psi = np.linalg.slogdet(psi)
    _, logdet_sigma = np.linalg.slogdet(sigma)
    tr = float(np.trace(psi @ np.linalg.inv(sigma)))
    return (0.5 * nu * logdet_psi - 0.5 * nu * p * math.log(2.0) - multigammaln(0.5 * nu, p)
            - 0.5 * (nu + p + 1.0) * logdet_sigma - 0.5 * tr)


def log_diag_inv_gamma(sigma, psi, nu):
    """Density of the diagonal restriction: independent IG((nu+p-1)/2, psi_jj/2)."""
    p = sigma.shape[0]
    if np.any(sigma[~np.eye(p, dtype=bool)] != 0.0):
        return -math.inf
    var = np.diag(sigma)
    shape = 0.5 * (nu + p - 1.0)
    scale = 0.5 * np.diag(psi)
    return float(np.sum(shape * np.log(scale) - gammaln(shape)
                        - (shape + 1.0) * np.log(var) - scale / var))


def log_base_prior(c: GaussianComponent, h: PriorHyperparams, log_trunc_mass=0.0) -> float:
    """Log base-measure density of one component (mean prior times covariance prior).

    The covariance truncation normalizer is omitted unless ``log_trunc_mass``
    (see :func:`estimate_log_trunc_mass`) is supplied; it is constant for fixed
    hyperparameters. Returns ``-inf`` when an eigenvalue leaves the bounds.
    """
    p = c.dim
    eigs = np.linalg.eigvalsh(c.cov)
    if np.any(eigs < h.eig_lo) or np.any(eigs > h.eig_hi):
        return -math.inf
    psi = h.psi(p)
    if h.covariance_shape == "diagonal":
        lp_cov = log_diag_inv_gamma(c.cov, psi, h.iw_dof)
    else:
        lp_cov = log_inv_wishart(c.cov, psi, h.iw_dof)
    return _log_mean_prior(c.mean, h.mean_scale) + lp_cov - log_trunc_mass


def log_repulsive_prior_unnorm(components, h: PriorHyperparams) -> float:
    """Sum of base log-densities plus ``log h_K``; excludes ``log Z_K``."""
    total = 0.0
    for c in components:
        total += log_base_prior(c, h)
        if total == -math.inf:
            return total
    return total + log_repulsion(components, h)


def sample_base_arrays(h: PriorHyperparams, p, size, rng, max_rejects=100):
    """``size`` i.i.d. draws from the base measure as ``(means, covs)`` arrays."""
    gen = rng.gen if isinstance(rng, RngStream) else rng
    means = h.mean_scale * gen.standard_normal((size, p))
    psi = h.psi(p)
    if h.covariance_shape == "diagonal":
        covs = sample_trunc_inv_gamma_diag_batch(
            h.diag_ig_shape(p), 0.5 * np.diag(psi), h.eig_lo, h.eig_hi, size, gen, max_rejects)
    else:
        covs = sample_trunc_inv_wishart_batch(
            psi, h.iw_dof, h.eig_lo, h.eig_hi, size, gen, max_rejects)
    return means, covs


def sample_base_components(h: PriorHyperparams, p, size, rng):
    means, covs = sample_base_arrays(h, p, size, rng)
    return [GaussianComponent(m, s) for m, s in zip(means, covs)]


def batch_spd_sqrt(covs):
    covs = np.asarray(covs, dtype=float)
    p = covs.shape[-1]
    flat = np.ascontiguousarray(covs.reshape(-1, p, p))
    return K.batch_factorize(flat)[0].reshape(covs.shape)


def _log_h_draws(k, h, p, n_draws, rng, chunk=20_000):
    out = []
    left = n_draws
    while left > 0:
        m = min(chunk, left)
        means, covs = sample_base_arrays(h, p, m * k, rng)
        means = means.reshape(m, k, p)
        covs = covs.reshape(m, k, p, p)
        sqrts = batch_spd_sqrt(covs)
        out.append(K.batch_log_h(means, covs, sqrts, h.kind_code, h.metric_code, h.g0))
        left -= m
    return np.concatenate(out)


def estimate_log_ZK(k, h: PriorHyperparams, n_draws, rng, p=2):
    """Monte-Carlo estimate of ``log Z_K`` with its delta-method standard error.

    Draws ``n_draws`` i.i.d. K-tuples from the base measure and averages
    ``h_K``. Returns ``(log_mean, se)`` where ``se = sd(h) / (sqrt(n) mean(h))``.
    """
    if k < 1:
        raise ArgumentError(f"K must be >= 1, got {k}")
    if n_draws < 100:
        raise ArgumentError(f"n_draws must be >= 100, got {n_draws}")
    if k == 1 or h.repulsion_metric == "none":
        return 0.0, 0.0
    hs = np.exp(_log_h_draws(k, h, p, n_draws, rng))
    mean = float(np.mean(hs))
    if mean <= 0.0:
        raise NumericError(f"all {n_draws} Monte-Carlo draws gave h_K = 0 for K = {k}")
    se = float(np.std(hs, ddof=1) / (math.sqrt(n_draws) * mean))
    return math.log(mean), se


def estimate_zk_bound_constant(h: PriorHyperparams, n_pairs, rng, p=2, squared=True):
    """Monte-Carlo ``c1 = E[(log g(d))^2] / 2`` over independent base-measure pairs.

    ``squared=True`` feeds ``g`` the squared distance, matching ``h_K``;
    ``squared=False`` feeds it the plain distance.
    """
    means, covs = sample_base_arrays(h, p, 2 * n_pairs, rng)
    sqrts = batch_spd_sqrt(covs)
    lg = K.batch_pair_log_g(means[:n_pairs], sqrts[:n_pairs], covs[:n_pairs],
                            means[n_pairs:], covs[n_pairs:], h.metric_code, h.g0, squared)
    return 0.5 * float(np.mean(lg**2))


def estimate_log_trunc_mass(h: PriorHyperparams, p, n_draws, rng):
    """Monte-Carlo log-probability that an untruncated covariance draw is in bounds."""
    wide = replace(h, eig_lo=np.finfo(float).tiny, eig_hi=np.finfo(float).max)
    _, covs = sample_base_arrays(wide, p, n_draws, rng)
    eigs = np.linalg.eigvalsh(covs)
    inside = np.all((eigs >= h.eig_lo) & (eigs <= h.eig_hi), axis=1)
    frac = float(np.mean(inside))
    return math.log(frac) if frac > 0 else -math.inf


def ztpois_log_pmf(k, lam):
    """Zero-truncated Poisson log-pmf."""
    if k < 1 or int(k) != k:
        raise ArgumentError(f"zero-truncated Poisson support is k >= 1, got {k}")
    if lam <= 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    return k * math.log(lam) - lam - math.lgamma(k + 1) - math.log(-math.expm1(-lam))


def _vn_log_terms(ks, n, t, beta, lam):
    # p_K(k) * k_(t) / (beta k)^(n)
    log_pk = ks * math.log(lam) - lam - gammaln(ks + 1.0) - math.log(-math.expm1(-lam))
    log_fall = gammaln(ks + 1.0) - gammaln(ks - t + 1.0)
    log_rise = gammaln(beta * ks + n) - gammaln(beta * ks)
    return log_pk + log_fall - log_rise


def mfm_log_Vn(n, t, h: PriorHyperparams, chunk=256):
    """Log of the partition coefficient ``V_n(t)`` (series in log space).

    Summation stops once the terms are decreasing and the latest one is below
    ``1e-12`` of the running sum, or after 1e5 terms.
    """
    if t < 1 or n < 1:
        raise ArgumentError(f"need n >= 1 and t >= 1, got n={n}, t={t}")
    if t > n:
        raise ArgumentError(f"t={t} exceeds n={n}")
    beta, lam = h.dirichlet_beta, h.poisson_lambda
    running = -math.inf
    start = t
    while start - t < VN_MAX_TERMS:
        stop = min(start + chunk, t + VN_MAX_TERMS)
        ks = np.arange(start, stop, dtype=float)
        terms = _vn_log_terms(ks, n, t, beta, lam)
        running = float(np.logaddexp(running, logsumexp(terms)))
        last = terms[-1]
        decreasing = terms.size < 2 or terms[-1] <= terms[-2]
        if decreasing and last < running + math.log(VN_TAIL_RTOL):
            break
        start = stop
    return running


def log_vn_table(n, h: PriorHyperparams, t_max=None):
    """``out[t] = log V_n(t)`` for ``t = 1..t_max``; ``out[0] = 0`` and entries past n are -inf."""
    t_max = n if t_max is None else t_max
    out = np.full(t_max + 2, -np.inf)
    out[0] = 0.0
    for t in range(1, min(t_max, n) + 1):
        out[t] = mfm_log_Vn(n, t, h)
    return out


@dataclass
class LogZCache:
    """Per-chain lazily filled table of Monte-Carlo ``log Z_t`` estimates.

    Each ``t`` is estimated from its own child seed of ``seed_seq`` so values do
    not depend on the order in which they are requested.
    """

    prior: PriorHyperparams
    p: int
    n_draws: int
    seed_seq: np.random.SeedSequence
    values: dict = field(default_factory=dict)

    def get(self, t):
        if t not in self.values:
            if t <= 1 or self.prior.repulsion_metric == "none":
                self.values[t] = (0.0, 0.0)
            else:
                seq = np.random.SeedSequence(self.seed_seq.entropy,
                                             spawn_key=tuple(self.seed_seq.spawn_key) + (t,))
                self.values[t] = estimate_log_ZK(t, self.prior, self.n_draws,
                                                 RngStream(seq), p=self.p)
        return self.values[t][0]

    def table(self, t_max):
        return np.array([0.0] + [self.get(t) for t in range(1, t_max + 1)])

    def summary(self):
        return {str(t): {"log_Z": v[0], "se": v[1]} for t, v in sorted(self.values.items())}
