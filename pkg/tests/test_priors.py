import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from mdlae.priors import (
    LAMBDA_MIN,
    Bernoulli,
    BernoulliPrior,
    Dirac,
    GaussianDiag,
    GaussianFull,
    GaussianPrior,
    UniformBinaryPrior,
    binary_grid,
    entropy,
    fit_prior,
    kl_to_prior,
    log_density,
    sample,
)

from _util import random_spd


# -- log densities --------------------------------------------------------


def test_uniform_binary_density():
    assert log_density(UniformBinaryPrior(3), [0, 1, 0]) == pytest.approx(-3 * np.log(2), abs=1e-15)


def test_standard_normal_mode():
    assert log_density(GaussianPrior(np.ones(1)), [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)


def test_bernoulli_vector_density_and_normalization():
    prior = BernoulliPrior(np.array([0.25, 0.5]))
    assert log_density(prior, [1, 0]) == pytest.approx(np.log(0.25) + np.log(0.5), abs=1e-15)
    total = np.exp(log_density(prior, binary_grid(2))).sum()
    assert abs(total - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_discrete_priors_normalize(d, seed):
    q = np.random.default_rng(seed).uniform(0, 1, d)
    for prior in (BernoulliPrior(q), UniformBinaryPrior(d)):
        assert abs(np.exp(log_density(prior, binary_grid(d))).sum() - 1) < 1e-12


def test_gaussian_density_matches_scipy():
    rng = np.random.default_rng(0)
    lam = rng.uniform(0.2, 3, 3)
    ys = rng.normal(size=(10, 3))
    ref = stats.multivariate_normal(np.zeros(3), np.diag(lam)).logpdf(ys)
    assert np.allclose(log_density(GaussianPrior(lam), ys), ref, rtol=0, atol=1e-12)


def test_discrete_prior_rejects_non_binary():
    with pytest.raises(ValueError):
        log_density(UniformBinaryPrior(2), [0.5, 1.0])


def test_bernoulli_prior_rejects_endpoints_but_features_are_clamped():
    with pytest.raises(ValueError):
        BernoulliPrior(np.array([0.0, 0.5]))
    assert np.isfinite(kl_to_prior(Bernoulli(np.array([0.0, 1.0])), BernoulliPrior(np.array([0.3, 0.6]))))


# -- KL -------------------------------------------------------------------


def test_kl_identical_is_zero():
    lam = np.array([0.5, 2.0])
    assert kl_to_prior(GaussianDiag(np.zeros(2), lam), GaussianPrior(lam)) == pytest.approx(0, abs=1e-15)


def test_kl_unit_shift():
    assert kl_to_prior(GaussianDiag(np.ones(1), np.ones(1)), GaussianPrior(np.ones(1))) == pytest.approx(0.5, abs=1e-14)


def test_kl_dirac_gaussian_is_infinite():
    assert kl_to_prior(Dirac(np.array([0.3])), GaussianPrior(np.ones(1))) == np.inf


def _kl_grid_1d(m, v, lam):
    f = stats.norm(m, np.sqrt(v))
    g = stats.norm(0, np.sqrt(lam))
    val, _ = integrate.quad(lambda y: f.pdf(y) * (f.logpdf(y) - g.logpdf(y)), m - 20 * np.sqrt(v), m + 20 * np.sqrt(v), epsabs=1e-13, limit=200)
    return val


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gaussian_kl_matches_numerical_integration(seed):
    rng = np.random.default_rng(seed)
    m, v, lam = rng.normal(size=2), rng.uniform(0.1, 3, 2), rng.uniform(0.1, 3, 2)
    ref = _kl_grid_1d(m[0], v[0], lam[0]) + _kl_grid_1d(m[1], v[1], lam[1])
    assert abs(kl_to_prior(GaussianDiag(m, v), GaussianPrior(lam)) - ref) < 1e-4


def test_full_gaussian_kl_matches_scipy_entropy_and_cross_entropy():
    rng = np.random.default_rng(1)
    d = 3
    cov, m, lam = random_spd(rng, d), rng.normal(size=d), rng.uniform(0.5, 2, d)
    # KL = cross-entropy - entropy, cross-entropy in closed form for a centred diagonal Gaussian
    cross = 0.5 * np.sum((np.diag(cov) + m * m) / lam + np.log(2 * np.pi * lam))
    ref = cross - stats.multivariate_normal(m, cov).entropy()
    assert kl_to_prior(GaussianFull(m, cov), GaussianPrior(lam)) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_bernoulli_kl_matches_enumeration_and_is_nonnegative(d, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(0, 1, d), rng.uniform(0.05, 0.95, d)
    ys = binary_grid(d)
    pf = np.prod(np.where(ys > 0.5, p, 1 - p), axis=1)
    pq = np.exp(log_density(BernoulliPrior(q), ys))
    mask = pf > 0
    ref = float(np.sum(pf[mask] * np.log(pf[mask] / pq[mask])))
    kl = kl_to_prior(Bernoulli(p), BernoulliPrior(q))
    assert abs(kl - ref) < 1e-12
    assert kl >= 0
    assert kl_to_prior(Bernoulli(q), BernoulliPrior(q)) == pytest.approx(0, abs=1e-14)


def test_dirac_discrete_kl_is_code_length():
    assert kl_to_prior(Dirac(np.array([1.0, 0.0, 1.0])), UniformBinaryPrior(3)) == pytest.approx(3 * np.log(2))


# -- entropy --------------------------------------------------------------


def test_entropies_match_scipy():
    rng = np.random.default_rng(2)
    cov = random_spd(rng, 3)
    assert entropy(GaussianFull(np.zeros(3), cov)) == pytest.approx(stats.multivariate_normal(np.zeros(3), cov).entropy(), abs=1e-12)
    v = rng.uniform(0.1, 2, 2)
    assert entropy(GaussianDiag(np.zeros(2), v)) == pytest.approx(sum(stats.norm(0, np.sqrt(x)).entropy() for x in v), abs=1e-12)
    p = np.array([0.2, 0.9])
    assert entropy(Bernoulli(p)) == pytest.approx(sum(stats.bernoulli(x).entropy() for x in p), abs=1e-12)


# -- prior refits ---------------------------------------------------------


def test_fit_gaussian_from_diracs_matches_grid_search():
    fitted = fit_prior([Dirac(np.array([-1.0])), Dirac(np.array([1.0]))], "gaussian")
    grid = np.linspace(1e-3, 4, 4000)
    ll = [log_density(GaussianPrior(np.array([lam])), np.array([[-1.0], [1.0]])).sum() for lam in grid]
    assert fitted.var[0] == pytest.approx(1.0)
    assert abs(grid[int(np.argmax(ll))] - fitted.var[0]) < 2e-3


def test_fit_gaussian_includes_noise_variance():
    fitted = fit_prior([GaussianDiag(np.zeros(2), np.full(2, 0.3))] * 5, "gaussian")
    assert np.allclose(fitted.var, 0.3)


def test_fit_gaussian_clamps_constant_features():
    fitted = fit_prior([Dirac(np.zeros(2))] * 3, "gaussian")
    assert np.all(fitted.var == LAMBDA_MIN)


def test_fit_bernoulli_is_mean():
    fitted = fit_prior([Bernoulli(np.array([0.2])), Bernoulli(np.array([0.4]))], "bernoulli")
    assert fitted.q[0] == pytest.approx(0.3)


def test_fit_rejects_mismatched_family():
    with pytest.raises(TypeError):
        fit_prior([Bernoulli(np.array([0.2]))], "gaussian")


# -- sampling -------------------------------------------------------------


def test_sample_dirac_is_point():
    y = np.array([0.5, -2.0])
    assert np.array_equal(sample(Dirac(y), np.random.default_rng(0)), y)


def test_sample_vanishing_variance():
    m = np.array([1.5, -0.5])
    ys = sample(GaussianDiag(m, np.full(2, 1e-12)), np.random.default_rng(0), 100)
    assert np.max(np.abs(ys - m)) < 1e-5


def test_sample_moments():
    ys = sample(GaussianDiag(np.zeros(1), np.ones(1)), np.random.default_rng(3), 100_000)
    assert abs(ys.mean()) < 0.02 and abs(ys.var() - 1) < 0.05


def test_sample_full_gaussian_covariance():
    rng = np.random.default_rng(4)
    cov = random_spd(rng, 2)
    ys = sample(GaussianFull(np.zeros(2), cov), rng, 200_000)
    assert np.allclose(np.cov(ys.T), cov, atol=0.05 * np.max(cov))


def test_rejects_invalid_parameters():
    with pytest.raises(ValueError):
        GaussianDiag(np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        GaussianFull(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        Bernoulli(np.array([1.2]))
