"""Posterior summaries: densities, log-CPO, MAP, distances, ARI."""

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm
from sklearn.metrics import adjusted_rand_score

from oracles import brute_log_cpo, mixture_log_density
from wrgm import evaluation as E
from wrgm.errors import ArgumentError, NumericError
from wrgm.gaussian import GaussianComponent, log_pdf
from wrgm.sampler import Chain, ChainSample


def sample(weights, means, covs, log_joint=0.0, assignments=None, sweep=0):
    means = np.atleast_2d(np.asarray(means, float))
    covs = np.asarray(covs, float).reshape(means.shape[0], means.shape[1], means.shape[1])
    z = np.zeros(1, dtype=np.int64) if assignments is None else np.asarray(assignments)
    return ChainSample(sweep=sweep, t=means.shape[0], weights=np.asarray(weights, float),
                       means=means, covs=covs, assignments=z, log_joint=log_joint)


def random_chain(rng, n_samples, p=2, k_max=3, n=10):
    out = []
    for j in range(n_samples):
        k = int(rng.integers(1, k_max + 1))
        w = rng.dirichlet(np.ones(k))
        means = rng.standard_normal((k, p)) * 2
        covs = np.array([np.eye(p) * rng.uniform(0.5, 2.0) for _ in range(k)])
        out.append(sample(w, means, covs, log_joint=float(rng.standard_normal()),
                          assignments=rng.integers(0, k, n), sweep=j))
    return Chain(out)


# --- mixture density -------------------------------------------------------

def test_single_component_density():
    c = GaussianComponent([1.0, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    s = sample([1.0], [c.mean], [c.cov])
    y = np.array([0.3, 0.2])
    assert E.mixture_density(s, y) == pytest.approx(math.exp(log_pdf(c, y)), rel=1e-12)


def test_symmetric_pair_at_origin():
    c = 1.7
    s = sample([0.5, 0.5], [[-c], [c]], [[[1.0]], [[1.0]]])
    assert E.mixture_density(s, [0.0]) == pytest.approx(2 * 0.5 * norm.pdf(c), rel=1e-12)


def test_density_integrates_to_one():
    s = sample([0.2, 0.5, 0.3], [[-3.0], [0.0], [4.0]], [[[0.5]], [[2.0]], [[1.0]]])
    xs = np.linspace(-25, 25, 20001)
    vals = E.mixture_density_many(s, xs[:, None])
    assert integrate.trapezoid(vals, xs) == pytest.approx(1.0, abs=1e-3)


def test_density_matches_scipy_reference():
    rng = np.random.default_rng(0)
    ch = random_chain(rng, 5)
    for s in ch.samples:
        y = rng.standard_normal(2)
        ref = mixture_log_density(s.weights, s.means, s.covs, y)
        assert math.log(E.mixture_density(s, y)) == pytest.approx(ref, abs=1e-12)


def test_density_dimension_mismatch():
    s = sample([1.0], [[0.0, 0.0]], [np.eye(2)])
    with pytest.raises(ArgumentError):
        E.mixture_density(s, [1.0, 2.0, 3.0])


# --- posterior mean density -------------------------------------------------

def test_single_sample_grid_equals_density():
    s = sample([0.4, 0.6], [[0.0, 0.0], [3.0, 1.0]], [np.eye(2), np.diag([2.0, 0.5])])
    axes = [np.linspace(-4, 6, 21), np.linspace(-3, 4, 15)]
    grid = E.posterior_mean_density(Chain([s]), axes)
    ref = E.mixture_density_many(s, grid.points()).reshape(21, 15)
    np.testing.assert_allclose(grid.values, ref, rtol=1e-12)
    assert np.all(grid.values >= 0) and np.all(np.isfinite(grid.values))


def test_grid_linear_in_chain():
    rng = np.random.default_rng(1)
    a, b = random_chain(rng, 4), random_chain(rng, 4)
    axes = E.default_grid_axes(rng.standard_normal((30, 2)) * 3, resolution=20)
    ga = E.posterior_mean_density(a, axes).values
    gb = E.posterior_mean_density(b, axes).values
    gab = E.posterior_mean_density(Chain(a.samples + b.samples), axes).values
    np.testing.assert_allclose(gab, 0.5 * (ga + gb), atol=1e-12)


def test_grid_integral_1d():
    ch = Chain([sample([0.3, 0.7], [[-2.0], [1.0]], [[[1.0]], [[0.5]]]),
                sample([1.0], [[0.5]], [[[2.0]]])])
    axes = [np.linspace(-15, 15, 3001)]
    grid = E.posterior_mean_density(ch, axes)
    assert integrate.trapezoid(grid.values, axes[0]) == pytest.approx(1.0, abs=2e-3)


def test_empty_chain_rejected():
    with pytest.raises(ArgumentError):
        E.posterior_mean_density(Chain([]), [np.linspace(0, 1, 3)])


# --- log-CPO ---------------------------------------------------------------

def test_log_cpo_single_value():
    # N(0, 1/(2 pi)) has density 1 at its mean; weight 0.5 halves it
    var = 1.0 / (2 * math.pi)
    s = sample([0.5, 0.5], [[0.0], [1e6]], [[[var]], [[var]]])
    assert E.log_cpo(Chain([s]), np.array([[0.0]])) == pytest.approx(-math.log(2), abs=1e-12)
    assert E.log_cpo(Chain([s]), np.array([[0.0]])) == pytest.approx(-0.6931472, abs=1e-7)


def test_log_cpo_identical_samples():
    s = sample([0.5, 0.5], [[0.0, 0.0], [2.0, 2.0]], [np.eye(2), np.eye(2)])
    y = np.random.default_rng(2).standard_normal((8, 2))
    ref = sum(mixture_log_density(s.weights, s.means, s.covs, yi) for yi in y)
    assert E.log_cpo(Chain([s, s, s]), y) == pytest.approx(ref, abs=1e-10)


def test_log_cpo_brute_force():
    rng = np.random.default_rng(3)
    ch = random_chain(rng, 10)
    y = rng.standard_normal((10, 2)) * 2
    ld = np.array([[mixture_log_density(s.weights, s.means, s.covs, yi) for yi in y]
                   for s in ch.samples])
    assert E.log_cpo(ch, y) == pytest.approx(brute_log_cpo(ld), abs=1e-10)


def test_log_cpo_order_invariant():
    rng = np.random.default_rng(4)
    ch = random_chain(rng, 12)
    y = rng.standard_normal((15, 2))
    perm = Chain([ch.samples[i] for i in rng.permutation(12)])
    assert E.log_cpo(perm, y) == E.log_cpo(ch, y) or \
        abs(E.log_cpo(perm, y) - E.log_cpo(ch, y)) < 1e-12


def test_log_cpo_far_point_stays_finite():
    # log-space evaluation: no underflow to zero density
    s = sample([1.0], [[0.0]], [[[1e-4]]])
    v = E.log_cpo(Chain([s, s]), np.array([[0.0], [1e4]]))
    assert math.isfinite(v) and v < -1e11


def test_log_cpo_zero_density_names_indices(monkeypatch):
    s = sample([1.0], [[0.0]], [[[1.0]]])
    ll = np.zeros((2, 3))
    ll[1, 2] = -np.inf
    monkeypatch.setattr(E, "log_density_matrix", lambda chain, data: ll)
    with pytest.raises(NumericError) as exc:
        E.log_cpo(Chain([s, s]), np.zeros((3, 1)))
    assert exc.value.payload == (2, 1)


# --- MAP -------------------------------------------------------------------

def test_map_rules():
    mk = lambda lj: sample([1.0], [[0.0]], [[[1.0]]], log_joint=lj)  # noqa: E731
    assert E.map_sample(Chain([mk(-3.0)])) == 0
    assert E.map_sample(Chain([mk(v) for v in (-5.0, -4.0, -1.0)])) == 2
    assert E.map_sample(Chain([mk(-2.0), mk(-2.0), mk(-2.0)])) == 0
    assert E.map_sample(Chain([mk(-math.inf), mk(-7.0)])) == 1
    with pytest.raises(ArgumentError):
        E.map_sample(Chain([]))


# --- minimum pairwise distances -------------------------------------------

def test_min_pairwise_examples():
    s = sample([0.5, 0.5], [[0.0], [3.0]], [[[1.0]], [[4.0]]])
    one = sample([1.0], [[0.0]], [[[1.0]]])
    ch = Chain([s, one])
    np.testing.assert_allclose(E.min_pairwise(ch, "mean_euclidean"), [3.0, math.inf])
    np.testing.assert_allclose(E.min_pairwise(ch, "wasserstein"), [math.sqrt(10.0), math.inf])
    summary = E.finite_summary(E.min_pairwise(ch, "mean_euclidean"))
    assert summary["count"] == 1 and summary["median"] == 3.0
    with pytest.raises(ArgumentError):
        E.min_pairwise(ch, "hellinger")


def test_wasserstein_minimum_dominates_mean_distance_of_its_pair():
    rng = np.random.default_rng(5)
    for s in random_chain(rng, 30, k_max=5).samples:
        if s.t < 2:
            continue
        comps = s.components
        pairs = [(a, b) for a in range(s.t) for b in range(a + 1, s.t)]
        from wrgm.gaussian import w2_squared
        w = [math.sqrt(w2_squared(comps[a], comps[b])) for a, b in pairs]
        a, b = pairs[int(np.argmin(w))]
        assert E.min_pairwise([s], "wasserstein")[0] >= \
            np.linalg.norm(s.means[a] - s.means[b]) - 1e-12


# --- ARI / k posterior -----------------------------------------------------

def test_ari_examples():
    z = np.array([0, 0, 1, 1, 2])
    assert E.adjusted_rand(z, z) == 1.0
    assert E.adjusted_rand(z, (z + 1) % 3) == pytest.approx(1.0)
    assert E.adjusted_rand(np.arange(4), np.zeros(4)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ArgumentError):
        E.adjusted_rand(z, z[:3])


def test_ari_matches_sklearn():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(2, 60))
        a, b = rng.integers(0, 4, n), rng.integers(0, 5, n)
        assert E.adjusted_rand(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_k_posterior_sums_to_one():
    ch = random_chain(np.random.default_rng(7), 37)
    kp = E.k_posterior(ch)
    assert abs(sum(kp.values()) - 1.0) < 1e-12


def test_evaluate_report():
    rng = np.random.default_rng(8)
    ch = random_chain(rng, 6, n=10)
    y = rng.standard_normal((10, 2))
    rep = E.evaluate(ch, y, labels=rng.integers(0, 2, 10))
    assert rep.log_cpo == E.log_cpo(ch, y)
    assert rep.map_sample_index == E.map_sample(ch)
    assert rep.min_mean_dist.shape == (6,) and -1 <= rep.ari <= 1
