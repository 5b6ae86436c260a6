import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdlae import netgraph as ng
from mdlae.codelength import QuadratureSpec, f_gen_bound, l_gen_exact, reconstruction_error
from mdlae.hessian import HessianResult, gauss_newton_full, optimal_noise
from mdlae.noise import (
    NoiseSpec,
    as_cov,
    denoising_bound,
    denoising_grad,
    denoising_grad_naive,
    neg_expected_log_prior,
    taylor_bound,
)
from mdlae.priors import GaussianFull, GaussianPrior, log_density

from _util import linear_decoder, random_decoder, random_spd

LOG_2PI = np.log(2 * np.pi)


def linear_instance(rng, dy=2, dx=3):
    W, b, s = rng.normal(size=(dx, dy)), rng.normal(size=dx), rng.uniform(0.5, 1.5, dx)
    return W, b, s, GaussianPrior(rng.uniform(0.5, 2, dy)), linear_decoder(W, b, s)


def gaussian_kl(m0, S0, m1, S1):
    d = len(m0)
    P1 = np.linalg.inv(S1)
    dm = m1 - m0
    return 0.5 * (np.trace(P1 @ S0) + dm @ P1 @ dm - d + np.linalg.slogdet(S1)[1] - np.linalg.slogdet(S0)[1])


# -- the bound ------------------------------------------------------------


def test_closed_form_matches_variational_bound_with_gaussian_law():
    rng = np.random.default_rng(0)
    _, _, _, prior, dec = linear_instance(rng)
    m, cov, x = rng.normal(size=2), random_spd(rng, 2) * 0.2, rng.normal(size=3)
    closed = denoising_bound(prior, dec, m, cov, x, mc_samples=None)
    mc = f_gen_bound(prior, dec, GaussianFull(m, cov), x, mc_samples=200_000, rng=rng)
    assert abs(closed - mc) < 0.01
    assert abs(denoising_bound(prior, dec, m, cov, x, 200_000, rng) - closed) < 0.01


def test_gaussian_prior_terms_are_explicit():
    rng = np.random.default_rng(1)
    W, b, s, _, dec = linear_instance(rng)
    lam, d = 1.7, 2
    prior = GaussianPrior(np.full(d, lam))
    m, cov, x = rng.normal(size=d), random_spd(rng, d) * 0.3, rng.normal(size=3)
    e_rec = reconstruction_error(dec, m, x) + 0.5 * np.trace(cov @ W.T @ np.diag(1 / s**2) @ W)
    ref = (
        e_rec
        + m @ m / (2 * lam)
        + np.trace(cov) / (2 * lam)
        - 0.5 * np.linalg.slogdet(cov)[1]
        + 0.5 * d * np.log(lam)
        - 0.5 * d
    )
    assert denoising_bound(prior, dec, m, cov, x, mc_samples=None) == pytest.approx(ref, abs=1e-12)


def test_monte_carlo_within_three_standard_errors():
    rng = np.random.default_rng(2)
    W, b, s, prior, dec = linear_instance(rng)
    m, cov, x = rng.normal(size=2), np.diag([0.3, 0.1]), rng.normal(size=3)
    closed = denoising_bound(prior, dec, m, cov, x, mc_samples=None)
    n = 4000
    for seed in range(20):
        r = np.random.default_rng(seed)
        ys = m + r.standard_normal((n, 2)) @ np.linalg.cholesky(cov).T
        se = np.std(reconstruction_error(dec, ys, x), ddof=1) / np.sqrt(n)
        assert abs(denoising_bound(prior, dec, m, cov, x, n, np.random.default_rng(seed)) - closed) < 3 * se


@pytest.mark.parametrize("dy", [1, 2])
def test_gap_to_oracle_is_kl_to_posterior(dy):
    rng = np.random.default_rng(3 + dy)
    W, b, s, prior, dec = linear_instance(rng, dy, 3)
    x, m, cov = rng.normal(size=3), rng.normal(size=dy), random_spd(rng, dy) * 0.1
    l_gen, _ = l_gen_exact(prior, dec, x, QuadratureSpec(points=2048 if dy == 1 else 512))
    bound = denoising_bound(prior, dec, m, cov, x, mc_samples=None)
    P = np.diag(1 / prior.var) + W.T @ np.diag(1 / s**2) @ W
    post_mean = np.linalg.solve(P, W.T @ ((x - b) / s**2))
    kl = gaussian_kl(m, cov, post_mean, np.linalg.inv(P))
    assert bound >= l_gen
    assert abs((bound - l_gen) - kl) < 1e-6


def test_optimal_noise_beats_scaled_noise_on_quadratics():
    rng = np.random.default_rng(5)
    for _ in range(10):
        _, _, _, prior, dec = linear_instance(rng)
        m, x = rng.normal(size=2), rng.normal(size=3)
        cov = optimal_noise(gauss_newton_full(prior, dec, m, x)).cov
        best = denoising_bound(prior, dec, m, cov, x, mc_samples=None)
        for c in (0.5, 2.0):
            assert best <= denoising_bound(prior, dec, m, c * cov, x, mc_samples=None)


def test_non_spd_covariance_rejected():
    _, _, _, prior, dec = linear_instance(np.random.default_rng(6))
    with pytest.raises(ValueError, match="positive definite"):
        denoising_bound(prior, dec, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(3), 4)


def test_covariance_shorthands():
    assert np.array_equal(as_cov(0.5, 2), 0.5 * np.eye(2))
    assert np.array_equal(as_cov([1.0, 2.0], 2), np.diag([1.0, 2.0]))
    with pytest.raises(ValueError):
        as_cov([1.0, 2.0, 3.0], 2)


def test_prior_term_monte_carlo_fallback():
    from mdlae.priors import UniformBinaryPrior

    with pytest.raises(ValueError):
        neg_expected_log_prior(UniformBinaryPrior(1), np.zeros(1), np.eye(1))
    assert neg_expected_log_prior(UniformBinaryPrior(1), np.zeros(1), np.eye(1), np.array([[0.0], [1.0]])) == pytest.approx(np.log(2))


def test_noise_spec_resolution():
    rng = np.random.default_rng(7)
    _, _, _, prior, dec = linear_instance(rng)
    m, x = rng.normal(size=2), rng.normal(size=3)
    assert np.array_equal(NoiseSpec("fixed", 0.2).resolve(prior, dec, m, x), 0.2 * np.eye(2))
    full = NoiseSpec("optimal_full", hessian="gn_full").resolve(prior, dec, m, x)
    assert np.allclose(full @ gauss_newton_full(prior, dec, m, x).values, np.eye(2), atol=1e-12)
    diag = NoiseSpec("optimal_diag", hessian="gn_diag").resolve(prior, dec, m, x)
    assert np.count_nonzero(diag - np.diag(np.diag(diag))) == 0
    with pytest.raises(ValueError):
        NoiseSpec("adaptive")


# -- the gradient ---------------------------------------------------------


def grad_instance(rng):
    enc = ng.layered([3, 4, 2], hidden="tanh", output="identity", rng=rng)
    dec = random_decoder(rng, [2, 4, 3], hidden="sigmoid")
    return enc, dec, GaussianPrior(rng.uniform(0.5, 2, 2)), rng.normal(size=3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_factorized_gradient_matches_naive(seed, k):
    rng = np.random.default_rng(seed)
    enc, dec, prior, x = grad_instance(rng)
    cov = random_spd(rng, 2) * 0.3
    g = denoising_grad(prior, enc, dec, x, cov, k, rng)
    enc_ref, dec_ref = denoising_grad_naive(prior, enc, dec, x, cov, g.draws)
    assert np.max(np.abs(g.encoder - enc_ref)) <= 1e-12 * max(1.0, np.max(np.abs(enc_ref)))
    assert np.max(np.abs(g.decoder - dec_ref)) <= 1e-12 * max(1.0, np.max(np.abs(dec_ref)))


def test_single_draw_is_plain_backprop_through_both_networks():
    rng = np.random.default_rng(8)
    enc, dec, prior, x = grad_instance(rng)
    g = denoising_grad(prior, enc, dec, x, 0.2, 1, rng)
    enc_ref, dec_ref = denoising_grad_naive(prior, enc, dec, x, 0.2 * np.eye(2), g.draws)
    assert np.allclose(g.encoder, enc_ref, rtol=1e-14, atol=1e-15)
    assert np.allclose(g.decoder, dec_ref, rtol=1e-14, atol=1e-15)


def test_vanishing_noise_gives_noiseless_gradient():
    rng = np.random.default_rng(9)
    enc, dec, prior, x = grad_instance(rng)
    g = denoising_grad(prior, enc, dec, x, 1e-12, 16, rng)
    rec_f = ng.forward(enc, x)
    m = rec_f.outputs(enc)
    rec_g = ng.forward(dec.net, m)
    gw, gy = ng.backprop(dec.net, rec_g, (rec_g.outputs(dec.net) - x) / dec.output.sigma**2, return_inputs=True)
    enc_ref = ng.backprop(enc, rec_f, gy + m / prior.var)
    assert np.max(np.abs(g.encoder - enc_ref)) < 1e-4
    assert np.max(np.abs(g.decoder - gw)) < 1e-4


def test_gradient_matches_finite_differences_with_frozen_draws():
    rng = np.random.default_rng(10)
    enc, dec, prior, x = grad_instance(rng)
    cov, z = 0.3 * np.eye(2), rng.standard_normal((5, 2))
    g = denoising_grad(prior, enc, dec, x, cov, z=z)
    f_enc = lambda w: denoising_grad(prior, enc.with_weights(w), dec, x, cov, z=z).value  # noqa: E731
    f_dec = lambda w: denoising_grad(prior, enc, dec.with_net(dec.net.with_weights(w)), x, cov, z=z).value  # noqa: E731
    for f, w, an in ((f_enc, enc.weights, g.encoder), (f_dec, dec.net.weights, g.decoder)):
        fd = np.array([(f(w + e) - f(w - e)) / 2e-6 for e in np.eye(len(w)) * 1e-6])
        assert np.max(np.abs(an - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-6


# -- second-order version -------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_taylor_exact_on_quadratics(seed):
    rng = np.random.default_rng(seed)
    _, _, _, prior, dec = linear_instance(rng)
    m, cov, x = rng.normal(size=2), random_spd(rng, 2) * 0.5, rng.normal(size=3)
    closed = denoising_bound(prior, dec, m, cov, x, mc_samples=None)
    assert abs(taylor_bound(prior, dec, m, cov, x, gauss_newton_full(prior, dec, m, x)) - closed) < 1e-10


def test_taylor_plug_in():
    rng = np.random.default_rng(11)
    dec, prior = random_decoder(rng, [1, 2]), GaussianPrior(np.ones(1))
    m, x = np.array([0.4]), rng.normal(size=2)
    base = reconstruction_error(dec, m, x) - log_density(prior, m)
    val = taylor_bound(prior, dec, m, 1.0, x, HessianResult(np.eye(1), "full", "t"))
    assert val - base == pytest.approx(0.5 - 0.5 * (1 + LOG_2PI), abs=1e-14)


def test_taylor_error_vanishes_faster_than_noise_level():
    rng = np.random.default_rng(12)
    dec, prior = random_decoder(rng, [1, 3, 2], hidden="sigmoid", output="sigmoid"), GaussianPrior(np.ones(1))
    m, x = np.array([0.3]), rng.normal(size=2)
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    weights = weights / weights.sum()

    def exact_bound(eps):
        e_rec = weights @ reconstruction_error(dec, (m + np.sqrt(eps) * nodes)[:, None], x)
        return e_rec + neg_expected_log_prior(prior, m, eps * np.eye(1)) - 0.5 * np.log(eps) - 0.5 * (1 + LOG_2PI)

    ratios = []
    for eps in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        ratios.append(abs(taylor_bound(prior, dec, m, eps, x) - exact_bound(eps)) / eps)
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 0.2 * ratios[0]
