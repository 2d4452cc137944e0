"""Reparameterized and doubly-reparameterized gradient estimators.

One draw of N reparameterized samples z_j = f(eps_j, phi) yields, with
s = softmax((1-alpha) * log w) the normalized (1-alpha)-power weights:

    rep:   grad = sum_j s_j * d/dparam log w(f(eps_j, phi))
    drep:  grad_phi = sum_j h_j * (stopped score)_j,
           h_j = alpha * s_j + (1-alpha) * s_j^2

The theta estimator is identical in both cases; only the phi estimator
changes.  Both are unbiased for the gradient of the bound, which is what the
finite-difference oracle and the cross-estimator checks in the test suite
verify.

Everything here is batched: the kernels take eps of shape (R, N, d) and return
one gradient sample per replicate row, chunked so memory stays bounded.  The
single-sample operations are thin wrappers over the batched kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as vrng
from .asymptotics import slope_fit
from .bounds import vr_iwae_from_log_weights

__all__ = [
    "GradientSample",
    "GradEstimate",
    "SnrBlock",
    "SnrReport",
    "h_coefficients",
    "grad_samples_from_eps",
    "rep_grad_sample",
    "drep_grad_sample",
    "grad_mean_se",
    "fd_grad_from_eps",
    "fd_grad_oracle",
    "snr_sweep",
    "grad_mse_sweep",
]

# target element count of the largest intermediate array per chunk
_CHUNK_TARGET = 20_000_000

DEFAULT_FD_STEP = 1e-3


@dataclass
class GradientSample:
    """One gradient draw of the bound w.r.t. theta and phi."""

    grad_theta: np.ndarray
    grad_phi: np.ndarray
    alpha: float
    n_importance: int
    estimator_kind: str  # "rep" | "drep"


@dataclass
class GradEstimate:
    """Per-coordinate Monte Carlo mean and standard error of a gradient."""

    theta_mean: np.ndarray
    theta_se: np.ndarray
    phi_mean: np.ndarray
    phi_se: np.ndarray
    replicates: int


def _check_alpha_closed(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return float(alpha)


def h_coefficients(s: np.ndarray, alpha: float) -> np.ndarray:
    """Doubly-reparameterized weights h_j = alpha*s_j + (1-alpha)*s_j^2.

    `s` must be a probability vector (the normalized (1-alpha)-power
    weights); h sums to at most 1, with equality iff alpha = 1 or s is
    degenerate.
    """
    alpha = _check_alpha_closed(alpha)
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0) or abs(float(s.sum()) - 1.0) > 1e-10:
        raise ValueError("s must be a probability vector")
    return alpha * s + (1.0 - alpha) * s * s


def _softmax_last(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def grad_samples_from_eps(model, eps: np.ndarray, alpha: float, kind: str):
    """Gradient samples for a batch of draws.

    eps has shape (..., N, d); the return is a pair of arrays shaped
    (..., theta_dim) and (..., phi_dim), one gradient sample per batch row.
    """
    alpha = _check_alpha_closed(alpha)
    if kind not in ("rep", "drep"):
        raise ValueError(f"unknown estimator kind {kind!r}")
    z = model.reparam(eps)
    lw = model.log_unnormalized_weight(z)
    s = _softmax_last((1.0 - alpha) * lw)
    d_theta, d_phi_total, d_phi_stopped = model.score_grads(eps, z)
    g_theta = np.einsum("...n,...nk->...k", s, d_theta)
    if kind == "rep":
        g_phi = np.einsum("...n,...nk->...k", s, d_phi_total)
    else:
        h = alpha * s + (1.0 - alpha) * s * s
        g_phi = np.einsum("...n,...nk->...k", h, d_phi_stopped)
    return g_theta, g_phi


def rep_grad_sample(model, alpha: float, n_importance: int, stream: vrng.RngStream) -> GradientSample:
    """One reparameterized gradient draw of the bound."""
    return _one_sample(model, alpha, n_importance, stream, "rep")


def drep_grad_sample(model, alpha: float, n_importance: int, stream: vrng.RngStream) -> GradientSample:
    """One doubly-reparameterized gradient draw; theta block matches rep."""
    return _one_sample(model, alpha, n_importance, stream, "drep")


def _one_sample(model, alpha, n_importance, stream, kind):
    eps = vrng.standard_normal(stream, (n_importance, model.d))
    g_theta, g_phi = grad_samples_from_eps(model, eps[np.newaxis], alpha, kind)
    return GradientSample(grad_theta=g_theta[0], grad_phi=g_phi[0], alpha=float(alpha),
                          n_importance=int(n_importance), estimator_kind=kind)


class _MeanSE:
    """Streaming per-coordinate mean and standard error accumulator."""

    def __init__(self, dim: int):
        self.n = 0
        self.s = np.zeros(dim)
        self.ss = np.zeros(dim)

    def add(self, batch: np.ndarray):
        self.n += batch.shape[0]
        self.s += batch.sum(axis=0)
        self.ss += (batch * batch).sum(axis=0)

    def finalize(self):
        mean = self.s / self.n
        var = np.maximum(self.ss / self.n - mean * mean, 0.0) * self.n / max(self.n - 1, 1)
        return mean, np.sqrt(var / self.n)


def _replicate_chunks(replicates: int, per_replicate_elems: int):
    chunk = max(1, _CHUNK_TARGET // max(per_replicate_elems, 1))
    start = 0
    while start < replicates:
        stop = min(start + chunk, replicates)
        yield start, stop
        start = stop


def grad_mean_se(model, alpha: float, n_importance: int, replicates: int,
                 stream: vrng.RngStream, kind: str = "rep") -> GradEstimate:
    """Empirical mean/SE of the gradient estimator over i.i.d. replicates.

    All draws come sequentially from `stream`, so the result does not depend
    on chunk sizes.
    """
    acc_t = _MeanSE(model.theta_dim)
    acc_p = _MeanSE(model.phi_dim)
    per_rep = n_importance * model.d
    for start, stop in _replicate_chunks(replicates, per_rep):
        eps = vrng.standard_normal(stream, (stop - start, n_importance, model.d))
        g_theta, g_phi = grad_samples_from_eps(model, eps, alpha, kind)
        acc_t.add(g_theta)
        acc_p.add(g_phi)
    tm, tse = acc_t.finalize()
    pm, pse = acc_p.finalize()
    return GradEstimate(tm, tse, pm, pse, replicates)


def _bound_samples(model, eps: np.ndarray, alpha: float) -> np.ndarray:
    z = model.reparam(eps)
    return vr_iwae_from_log_weights(model.log_unnormalized_weight(z), alpha)


def fd_grad_from_eps(model, eps: np.ndarray, alpha: float, step: float):
    """Central finite-difference gradient samples on a shared eps batch.

    Shifting theta leaves z = f(eps, phi) untouched; shifting a phi
    coordinate moves the samples along the reparameterization path, which is
    exactly what the analytic estimators differentiate through.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    r = eps.shape[0]
    g_theta = np.empty((r, model.theta_dim))
    g_phi = np.empty((r, model.phi_dim))
    theta = model.theta_vec.copy()
    phi = model.phi_vec.copy()
    for k in range(model.theta_dim):
        e = np.zeros_like(theta)
        e[k] = step
        hi = _bound_samples(model.with_theta(theta + e), eps, alpha)
        lo = _bound_samples(model.with_theta(theta - e), eps, alpha)
        g_theta[:, k] = (hi - lo) / (2.0 * step)
    for k in range(model.phi_dim):
        e = np.zeros_like(phi)
        e[k] = step
        hi = _bound_samples(model.with_phi(phi + e), eps, alpha)
        lo = _bound_samples(model.with_phi(phi - e), eps, alpha)
        g_phi[:, k] = (hi - lo) / (2.0 * step)
    return g_theta, g_phi


def fd_grad_oracle(model, alpha: float, n_importance: int, step: float,
                   replicates: int, stream: vrng.RngStream) -> GradEstimate:
    """Finite-difference oracle for the bound gradient, with common random
    numbers across the +/- evaluations of every coordinate."""
    acc_t = _MeanSE(model.theta_dim)
    acc_p = _MeanSE(model.phi_dim)
    per_rep = n_importance * model.d * (model.theta_dim + model.phi_dim)
    for start, stop in _replicate_chunks(replicates, per_rep):
        eps = vrng.standard_normal(stream, (stop - start, n_importance, model.d))
        g_theta, g_phi = fd_grad_from_eps(model, eps, alpha, step)
        acc_t.add(g_theta)
        acc_p.add(g_phi)
    tm, tse = acc_t.finalize()
    pm, pse = acc_p.finalize()
    return GradEstimate(tm, tse, pm, pse, replicates)


# --------------------------------------------------------------------------
# SNR harness
# --------------------------------------------------------------------------

SNR_INF = np.inf


@dataclass
class SnrBlock:
    """SNR of one (estimator, parameter block) pair across the N grid."""

    per_coordinate_snr: np.ndarray  # (len(n_grid), n_coords); +inf marks zero variance
    mean_snr: np.ndarray            # mean over finite coordinates per N
    slope: float
    intercept: float
    slope_se: float


@dataclass
class SnrReport:
    n_grid: list
    m_samples: int
    replicates: int
    theta_indices: np.ndarray
    phi_indices: np.ndarray
    blocks: dict = field(default_factory=dict)  # (kind, block) -> SnrBlock


def _snr_from_samples(samples: np.ndarray) -> np.ndarray:
    """|mean| / std per coordinate; zero-variance coordinates become +inf."""
    mean = samples.mean(axis=0)
    std = samples.std(axis=0, ddof=1)
    out = np.full(mean.shape, SNR_INF)
    nz = std > 0
    out[nz] = np.abs(mean[nz]) / std[nz]
    return out


def snr_sweep(model, alpha: float, m_samples: int, n_grid: Sequence[int],
              replicates: int, coordinate_sample: int,
              stream: vrng.RngStream) -> SnrReport:
    """Per-coordinate SNR of the gradient estimators across an N grid.

    For each N, `replicates` independent gradient estimates (each averaging
    `m_samples` draws) are formed for the rep and drep estimators on common
    random numbers; SNR = |mean|/std per coordinate, averaged over a
    seed-deterministic subset of `coordinate_sample` coordinates per block,
    then fitted with an ordinary least-squares slope in log-log scale.
    """
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    if replicates < 100:
        raise ValueError("need at least 100 replicates for SNR estimation")

    k_theta = min(coordinate_sample, model.theta_dim)
    k_phi = min(coordinate_sample, model.phi_dim)
    theta_idx = vrng.permutation_indices(stream.child(0), model.theta_dim, k_theta)
    phi_idx = vrng.permutation_indices(stream.child(1), model.phi_dim, k_phi)

    kinds = ("rep", "drep")
    snr = {(kind, blk): np.empty((len(n_grid), k)) for kind in kinds
           for blk, k in (("theta", k_theta), ("phi", k_phi))}

    for i, n in enumerate(n_grid):
        draw_stream = stream.child(2 + i)
        # replicates is moderate, so per-N sample matrices (replicates x k)
        # fit comfortably even though the draws themselves are chunked
        samples = {(kind, blk): np.empty((replicates, k)) for kind in kinds
                   for blk, k in (("theta", k_theta), ("phi", k_phi))}
        per_rep = m_samples * n * model.d
        for start, stop in _replicate_chunks(replicates, per_rep):
            eps = vrng.standard_normal(draw_stream, (stop - start, m_samples, n, model.d))
            for kind in kinds:
                g_theta, g_phi = grad_samples_from_eps(model, eps, alpha, kind)
                g_theta = g_theta.mean(axis=1)  # average the m_samples copies
                g_phi = g_phi.mean(axis=1)
                samples[(kind, "theta")][start:stop] = g_theta[:, theta_idx]
                samples[(kind, "phi")][start:stop] = g_phi[:, phi_idx]
        for key, mat in samples.items():
            snr[key][i] = _snr_from_samples(mat)

    report = SnrReport(n_grid=n_grid, m_samples=m_samples, replicates=replicates,
                       theta_indices=theta_idx, phi_indices=phi_idx)
    log_n = np.log(np.asarray(n_grid, dtype=np.float64))
    for key, mat in snr.items():
        finite = np.isfinite(mat)
        mean_snr = np.array([mat[i][finite[i]].mean() if finite[i].any() else SNR_INF
                             for i in range(len(n_grid))])
        usable = np.isfinite(mean_snr) & (mean_snr > 0)
        if usable.sum() >= 2:
            fit = slope_fit(log_n[usable], np.log(mean_snr[usable]))
            slope, intercept, slope_se = fit.slope, fit.intercept, fit.slope_se
        else:
            slope, intercept, slope_se = np.nan, np.nan, np.nan
        report.blocks[key] = SnrBlock(per_coordinate_snr=mat, mean_snr=mean_snr,
                                      slope=slope, intercept=intercept, slope_se=slope_se)
    return report


def grad_mse_sweep(model, alpha: float, n_grid: Sequence[int], replicates: int,
                   stream: vrng.RngStream) -> list:
    """MSE of the theta-gradient estimator and of the bound across an N grid.

    The references are the exact marginal score and the exact log marginal;
    MSEs are averaged over replicates (and coordinates, for the gradient).
    """
    exact_grad = model.marginal_score()
    log_marginal = model.log_marginal()
    rows = []
    for n in n_grid:
        sq_grad = 0.0
        sq_bound = 0.0
        count = 0
        per_rep = n * model.d
        draw_stream = stream.child(n)
        for start, stop in _replicate_chunks(replicates, per_rep):
            eps = vrng.standard_normal(draw_stream, (stop - start, n, model.d))
            z = model.reparam(eps)
            lw = model.log_unnormalized_weight(z)
            s = _softmax_last((1.0 - alpha) * lw)
            d_theta, _, _ = model.score_grads(eps, z)
            g_theta = np.einsum("rn,rnk->rk", s, d_theta)
            bound = vr_iwae_from_log_weights(lw, alpha)
            sq_grad += float(((g_theta - exact_grad) ** 2).sum())
            sq_bound += float(((bound - log_marginal) ** 2).sum())
            count += stop - start
        rows.append({
            "alpha": float(alpha),
            "n_importance": int(n),
            "replicates": int(count),
            "grad_mse_theta": sq_grad / (count * model.theta_dim),
            "bound_mse": sq_bound / count,
        })
    return rows
