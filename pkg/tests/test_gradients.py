import math

import numpy as np
import pytest

from vriwae.gradients import (drep_grad_sample, fd_grad_from_eps, fd_grad_oracle,
                              grad_mean_se, grad_mse_sweep, grad_samples_from_eps,
                              h_coefficients, rep_grad_sample, snr_sweep)
from vriwae.models import GaussianToy, LinearGaussian
from vriwae.rng import make_stream, standard_normal


def toy(d=3, theta=0.0, phi=0.5):
    return GaussianToy(d=d, theta=np.full(d, theta), phi=np.full(d, phi))


def lingauss(d=3, seed=0):
    rng = np.random.default_rng(seed)
    return LinearGaussian(d=d, theta=rng.normal(size=d), a_tilde=rng.normal(size=d),
                          b=rng.normal(size=d), x=rng.normal(size=d))


# --------------------------------------------------------------------------
# h coefficients
# --------------------------------------------------------------------------

def test_h_uniform():
    for n in (2, 5, 8):
        s = np.full(n, 1.0 / n)
        for alpha in (0.0, 0.4, 1.0):
            expected = alpha / n + (1.0 - alpha) / n**2
            assert np.allclose(h_coefficients(s, alpha), expected, atol=1e-14)


def test_h_hand_value():
    h = h_coefficients(np.array([0.75, 0.25]), 0.5)
    assert np.allclose(h, [0.65625, 0.15625], atol=1e-14)


def test_h_degenerate():
    s = np.zeros(4)
    s[0] = 1.0
    assert np.allclose(h_coefficients(s, 0.0), s, atol=1e-14)


def test_h_sum_bounds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 20))
        s = rng.dirichlet(np.ones(n))
        for alpha in (0.0, 0.3, 0.8, 1.0):
            h = h_coefficients(s, alpha)
            total = h.sum()
            assert alpha + (1.0 - alpha) / n - 1e-12 <= total <= 1.0 + 1e-12


def test_h_rejects_non_probability():
    with pytest.raises(ValueError):
        h_coefficients(np.array([0.5, 0.6]), 0.3)
    with pytest.raises(ValueError):
        h_coefficients(np.array([-0.1, 1.1]), 0.3)


# --------------------------------------------------------------------------
# single-draw estimators
# --------------------------------------------------------------------------

def test_single_sample_is_score_at_n1():
    # with one sample the softmax weight is 1 for every alpha
    model = toy()
    for alpha in (0.0, 0.5, 1.0):
        g = rep_grad_sample(model, alpha, 1, make_stream(0, 0))
        eps = standard_normal(make_stream(0, 0), (1, model.d))
        z = model.reparam(eps)
        _, d_total, _ = model.score_grads(eps, z)
        assert np.allclose(g.grad_phi, d_total[0], atol=1e-12)


def test_pinned_noise_hand_value():
    # toy d=1, theta=0, phi=1, eps=0, N=1: grad_phi = -(phi + eps - theta) = -1
    model = GaussianToy(d=1, theta=np.zeros(1), phi=np.ones(1))
    eps = np.zeros((1, 1, 1))
    g_theta, g_phi = grad_samples_from_eps(model, eps, 0.3, "rep")
    assert g_phi[0, 0] == pytest.approx(-1.0, abs=1e-12)
    g_theta2, g_phi2 = grad_samples_from_eps(model, eps, 0.3, "drep")
    assert g_phi2[0, 0] == pytest.approx(-1.0, abs=1e-12)
    assert np.array_equal(g_theta, g_theta2)


def test_theta_block_identical_rep_drep():
    model = lingauss(4)
    rep = rep_grad_sample(model, 0.4, 8, make_stream(5, 0))
    drep = drep_grad_sample(model, 0.4, 8, make_stream(5, 0))
    assert np.array_equal(rep.grad_theta, drep.grad_theta)
    assert rep.estimator_kind == "rep" and drep.estimator_kind == "drep"


def test_alpha_one_path_uniform_weights():
    # at alpha=1 both estimators average the scores uniformly
    model = toy(d=2)
    eps = standard_normal(make_stream(7, 0), (1, 6, 2))
    z = model.reparam(eps)
    d_theta, d_total, d_stopped = model.score_grads(eps, z)
    g_theta, g_phi = grad_samples_from_eps(model, eps, 1.0, "rep")
    assert np.allclose(g_phi[0], d_total[0].mean(axis=0), atol=1e-12)
    _, g_phi_d = grad_samples_from_eps(model, eps, 1.0, "drep")
    assert np.allclose(g_phi_d[0], d_stopped[0].mean(axis=0), atol=1e-12)


def test_drep_alpha_zero_squared_weights():
    model = toy(d=2)
    eps = standard_normal(make_stream(8, 0), (1, 5, 2))
    z = model.reparam(eps)
    lw = model.log_unnormalized_weight(z)
    s = np.exp(lw - lw.max(axis=-1, keepdims=True))
    s = s / s.sum(axis=-1, keepdims=True)
    _, _, d_stopped = model.score_grads(eps, z)
    _, g_phi = grad_samples_from_eps(model, eps, 0.0, "drep")
    expected = np.einsum("rn,rnk->rk", s**2, d_stopped)
    assert np.allclose(g_phi, expected, atol=1e-12)


def test_alpha_domain():
    with pytest.raises(ValueError):
        rep_grad_sample(toy(), -0.2, 2, make_stream(0, 0))
    with pytest.raises(ValueError):
        drep_grad_sample(toy(), 1.2, 2, make_stream(0, 0))


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------

def test_fd_quadratic_exact():
    # central differences are exact on quadratics up to rounding
    model = toy(d=2)
    eps = standard_normal(make_stream(9, 0), (64, 4, 2))
    g_theta, g_phi = fd_grad_from_eps(model, eps, 1.0, 1e-4)
    # alpha=1 bound is mean of log-weights: exact gradients available
    z = model.reparam(eps)
    d_theta, d_total, _ = model.score_grads(eps, z)
    assert np.allclose(g_theta, d_theta.mean(axis=1), atol=1e-6)
    assert np.allclose(g_phi, d_total.mean(axis=1), atol=1e-6)


def test_fd_step_second_order():
    # halving the step shrinks the bias ~4x on a non-quadratic objective
    model = lingauss(2, seed=3)
    eps = standard_normal(make_stream(10, 0), (1, 4, 2))
    exact_t, exact_p = grad_samples_from_eps(model, eps, 0.3, "rep")
    errs = []
    for step in (0.2, 0.1):
        g_t, g_p = fd_grad_from_eps(model, eps, 0.3, step)
        errs.append(np.max(np.abs(np.concatenate([g_t - exact_t, g_p - exact_p], axis=1))))
    assert errs[1] < errs[0] / 2.5


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        fd_grad_from_eps(toy(), np.zeros((1, 1, 3)), 0.0, 0.0)


def test_fd_oracle_matches_rep_mean():
    model = toy(d=2, theta=0.0, phi=0.7)
    rep = grad_mean_se(model, 0.3, 4, 20_000, make_stream(11, 0), "rep")
    fd = fd_grad_oracle(model, 0.3, 4, 1e-3, 20_000, make_stream(11, 0))
    for blk in ("theta", "phi"):
        ma, sa = getattr(rep, f"{blk}_mean"), getattr(rep, f"{blk}_se")
        mb, sb = getattr(fd, f"{blk}_mean"), getattr(fd, f"{blk}_se")
        assert np.all(np.abs(ma - mb) <= 3.0 * np.sqrt(sa**2 + sb**2))


def test_matched_params_gradient_near_zero():
    # theta = phi: the rep phi-gradient has mean zero by symmetry
    model = toy(d=3, theta=0.5, phi=0.5)
    est = grad_mean_se(model, 0.0, 4, 20_000, make_stream(12, 0), "rep")
    assert np.all(np.abs(est.phi_mean) <= 3.0 * est.phi_se)


# --------------------------------------------------------------------------
# SNR harness
# --------------------------------------------------------------------------

def test_snr_planted_slope():
    # synthetic estimator: mean fixed, std ~ 1/sqrt(N) -> slope 1/2

    class Synthetic:
        d = 1
        theta_dim = 1
        phi_dim = 1

        def reparam(self, eps):
            return eps

        def log_unnormalized_weight(self, z):
            return np.zeros(z.shape[:-1])  # uniform softmax

        def score_grads(self, eps, z):
            g = 1.0 + eps  # mean 1, unit variance per sample
            return g, g, g

    n_grid = [4, 16, 64, 256]
    report = snr_sweep(Synthetic(), 0.0, 1, n_grid, 4000, 1, make_stream(13, 0))
    for key in (("rep", "theta"), ("rep", "phi")):
        assert report.blocks[key].slope == pytest.approx(0.5, abs=0.02)


def test_snr_zero_variance_sentinel():

    class Constant:
        d = 1
        theta_dim = 1
        phi_dim = 1

        def reparam(self, eps):
            return eps

        def log_unnormalized_weight(self, z):
            return np.zeros(z.shape[:-1])

        def score_grads(self, eps, z):
            g = np.ones_like(eps)
            return g, g, g

    report = snr_sweep(Constant(), 0.0, 1, [2, 4], 200, 1, make_stream(14, 0))
    blk = report.blocks[("rep", "theta")]
    assert np.all(np.isinf(blk.per_coordinate_snr))
    assert math.isnan(blk.slope)


def test_snr_input_validation():
    with pytest.raises(ValueError):
        snr_sweep(toy(), 0.0, 1, [4, 2], 200, 1, make_stream(0, 0))
    with pytest.raises(ValueError):
        snr_sweep(toy(), 0.0, 1, [2, 4], 50, 1, make_stream(0, 0))


# --------------------------------------------------------------------------
# MSE sweep
# --------------------------------------------------------------------------

def test_mse_matched_params_bound_exact():
    # constant weights: the bound estimate equals the log marginal exactly,
    # while the theta-gradient estimator keeps its sampling variance d/N
    model = toy(d=4, theta=0.3, phi=0.3)
    rows = grad_mse_sweep(model, 0.0, [2, 8], 4000, make_stream(15, 0))
    for row in rows:
        assert row["bound_mse"] == 0.0
        expected_var = 1.0 / row["n_importance"]  # per coordinate: Var(mean eps) = 1/N
        assert row["grad_mse_theta"] == pytest.approx(expected_var, rel=0.15)


def test_mse_bound_decreases_with_n():
    model = lingauss(3, seed=21)
    rows = grad_mse_sweep(model, 0.0, [2, 16, 128], 4000, make_stream(16, 0))
    mses = [r["bound_mse"] for r in rows]
    assert mses[0] > mses[1] > mses[2]


def test_mse_elbo_path_ignores_n():
    # alpha=1: one N=100 estimate and the average of 100 N=1 estimates are the
    # same statistic, so budget-matched MSEs agree up to replicate noise
    from vriwae.bounds import vr_iwae_from_log_weights
    model = lingauss(3, seed=22)
    ell = model.log_marginal()
    rows = 400

    eps = standard_normal(make_stream(17, 0), (rows, 100, 3))
    lw = model.log_unnormalized_weight(model.reparam(eps))
    err_batched = (vr_iwae_from_log_weights(lw, 1.0, axis=-1) - ell) ** 2

    eps = standard_normal(make_stream(18, 0), (rows, 100, 3))
    lw = model.log_unnormalized_weight(model.reparam(eps))
    singles = vr_iwae_from_log_weights(lw[..., np.newaxis], 1.0, axis=-1)  # 100 N=1 estimates
    err_avged = (singles.mean(axis=1) - ell) ** 2

    se = math.sqrt(err_batched.var(ddof=1) / rows + err_avged.var(ddof=1) / rows)
    assert abs(err_batched.mean() - err_avged.mean()) <= 3.0 * se
