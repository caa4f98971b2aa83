"""Seeded random variate generation.

All randomness flows through :class:`RngStream`, a thin owner of a numpy
``Generator`` backed by the counter-based Philox bit generator. Streams are
split with ``SeedSequence.spawn`` so concurrent chains never share state.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import ArgumentError, NumericError


class RngStream:
    """Single-owner reproducible random stream.

    Parameters
    ----------
    seed : int or numpy.random.SeedSequence
        64-bit unsigned seed, or a seed sequence obtained from :meth:`split`.
    """

    def __init__(self, seed=0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            seed = int(seed)
            if not 0 <= seed < 2**64:
                raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
            self._seq = np.random.SeedSequence(seed)
        self.gen = np.random.Generator(np.random.Philox(self._seq))

    @property
    def seed(self):
        return self._seq.entropy

    @property
    def spawn_key(self):
        return tuple(self._seq.spawn_key)

    def split(self, n=1):
        """Return ``n`` child streams independent of this one and each other."""
        return [RngStream(s) for s in self._seq.spawn(n)]

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"


def _gen(rng):
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    raise ArgumentError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def sample_mvn(mean, chol, rng):
    """Draw ``mean + chol @ z`` with ``z`` standard normal."""
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(chol, dtype=float)
    if chol.shape != (mean.shape[0], mean.shape[0]):
        raise ArgumentError(f"chol shape {chol.shape} does not match mean length {mean.shape[0]}")
    z = _gen(rng).standard_normal(mean.shape[0])
    return mean + chol @ z


def _bartlett_inv_wishart(psi_inv_chol, nu, size, gen):
    """Inverse-Wishart(psi, nu) draws via the Bartlett factor of Wishart(psi^-1, nu)."""
    p = psi_inv_chol.shape[0]
    chi = gen.chisquare(nu - np.arange(p), size=(size, p))
    normals = gen.standard_normal((size, p * (p - 1) // 2))
    return K.bartlett_inv_wishart(np.ascontiguousarray(psi_inv_chol), chi, normals)


def _in_bounds(eigs, eig_lo, eig_hi):
    return np.all((eigs >= eig_lo) & (eigs <= eig_hi), axis=-1)


def _covs_in_bounds(covs, eig_lo, eig_hi):
    lo, hi = K.batch_eig_range(covs)
    return (lo >= eig_lo) & (hi <= eig_hi)


def sample_trunc_inv_wishart_batch(psi, nu, eig_lo, eig_hi, size, rng, max_rejects=100):
    """``size`` draws from IW(psi, nu) restricted to eigenvalues in [eig_lo, eig_hi].

    Rejected draws are redrawn in rounds; a draw that fails ``max_rejects``
    rounds in a row raises :class:`NumericError`.
    """
    psi = np.asarray(psi, dtype=float)
    p = psi.shape[0]
    if nu <= p - 1:
        raise ArgumentError(f"inverse-Wishart needs nu > p - 1 = {p - 1}, got {nu}")
    gen = _gen(rng)
    psi_inv_chol = np.linalg.cholesky(np.linalg.inv(psi))
    out = _bartlett_inv_wishart(psi_inv_chol, nu, size, gen)
    bad = ~_covs_in_bounds(out, eig_lo, eig_hi)
    rounds = 0
    while np.any(bad):
        rounds += 1
        if rounds > max_rejects:
            raise NumericError(
                f"truncated inverse-Wishart: {max_rejects} consecutive rejections "
                f"with eigenvalue bounds [{eig_lo:g}, {eig_hi:g}]",
                payload=(eig_lo, eig_hi),
            )
        idx = np.flatnonzero(bad)
        redraw = _bartlett_inv_wishart(psi_inv_chol, nu, idx.size, gen)
        out[idx] = redraw
        bad[idx] = ~_covs_in_bounds(redraw, eig_lo, eig_hi)
    return out


def sample_trunc_inv_wishart(psi, nu, eig_lo, eig_hi, max_rejects, rng):
    """Single truncated inverse-Wishart draw (see the batch version)."""
    return sample_trunc_inv_wishart_batch(psi, nu, eig_lo, eig_hi, 1, rng, max_rejects)[0]


def sample_trunc_inv_gamma_diag_batch(shape, scale, eig_lo, eig_hi, size, rng, max_rejects=100):
    """Diagonal covariances with independent inverse-Gamma(shape, scale_j) variances.

    ``scale`` is a length-p vector; the result has shape ``(size, p, p)``.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    gen = _gen(rng)

    def draw(m):
        return scale / gen.gamma(shape, 1.0, size=(m, p))

    var = draw(size)
    bad = ~_in_bounds(var, eig_lo, eig_hi)
    rounds = 0
    while np.any(bad):
        rounds += 1
        if rounds > max_rejects:
            raise NumericError(
                f"truncated inverse-Gamma: {max_rejects} consecutive rejections "
                f"with eigenvalue bounds [{eig_lo:g}, {eig_hi:g}]",
                payload=(eig_lo, eig_hi),
            )
        idx = np.flatnonzero(bad)
        var[idx] = draw(idx.size)
        bad[idx] = ~_in_bounds(var[idx], eig_lo, eig_hi)
    out = np.zeros((size, p, p))
    out[:, np.arange(p), np.arange(p)] = var
    return out


def sample_dirichlet(beta, k, rng):
    """Symmetric Dirichlet(beta) weights on the k-simplex, via normalized Gammas."""
    if k < 1:
        raise ArgumentError(f"K must be >= 1, got {k}")
    return sample_dirichlet_alpha(np.full(k, float(beta)), rng)


def sample_dirichlet_alpha(alpha, rng):
    alpha = np.asarray(alpha, dtype=float)
    g = _gen(rng).gamma(alpha, 1.0)
    s = g.sum()
    if s == 0.0:
        # all gammas underflowed (tiny alpha); fall back to a uniform vertex
        w = np.zeros_like(alpha)
        w[_gen(rng).integers(alpha.size)] = 1.0
        return w
    return g / s


def sample_ztpois(lam, rng):
    """Zero-truncated Poisson draw by rejecting zeros."""
    if lam <= 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    gen = _gen(rng)
    while True:
        k = int(gen.poisson(lam))
        if k > 0:
            return k


def sample_categorical(log_weights, rng):
    """Index drawn with probability proportional to ``exp(log_weights)``.

    Uses inversion of the normalized CDF after max-shifting in log space.
    """
    lw = np.asarray(log_weights, dtype=float)
    top = np.max(lw)
    if not np.isfinite(top):
        if top == -np.inf:
            raise NumericError("all categorical log-weights are -inf", payload=lw)
        raise NumericError("categorical log-weights contain +inf or nan", payload=lw)
    w = np.exp(lw - top)
    cdf = np.cumsum(w)
    u = _gen(rng).random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, lw.size - 1)
