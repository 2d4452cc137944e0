"""Stochastic gradient ascent on the VR-IWAE objective for the analytic models.

One gradient sample per step (single-draw estimators), plain SGD by default.
The default learning rate 1e-3 was selected by a sweep over {1e-2, 1e-3, 1e-4}
on the high-dimensional density-ratio run (d=1000, alpha=0.2, N=100, 5000
epochs): 1e-4 is too slow (final normalized distance 0.41), 1e-2 converges
fastest (3e-4) but then jitters at its noise floor, and 1e-3 reaches 4e-3
with a cleanly decreasing trend.  Adam (lr 1e-3, beta1 0.9, beta2 0.999,
eps 1e-8) is available as an alternative.

Trajectories log the normalized squared parameter distance B^2/d for the toy
model (or lambda for the linear Gaussian one), a small fresh Monte Carlo gap
estimate, and the gradient norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as vrng
from .bounds import vr_iwae_from_log_weights
from .gradients import grad_samples_from_eps
from .models import GaussianToy

__all__ = [
    "DEFAULT_LEARNING_RATE",
    "TrainConfig",
    "TrajectoryRow",
    "Trajectory",
    "AdamState",
    "TrainingDiverged",
    "sgd_step",
    "adam_step",
    "run_training",
]

DEFAULT_LEARNING_RATE = 1e-3
GRAD_NORM_LIMIT = 1e8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.2
    n_importance: int = 100
    estimator: str = "rep"           # "rep" | "drep"
    optimizer: str = "sgd"           # "sgd" | "adam"
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 5000
    train_theta: bool = False
    train_phi: bool = True
    log_every: int = 50
    gap_replicates: int = 16         # fresh batches per logged gap estimate

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.estimator not in ("rep", "drep"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrajectoryRow:
    epoch: int
    progress: float        # B^2/d for the toy model, lambda for linear Gaussian
    gap_mean: float
    gap_se: float
    grad_norm: float


@dataclass
class Trajectory:
    progress_label: str    # "bd2_over_d" | "lambda"
    rows: list = field(default_factory=list)

    @property
    def final(self) -> TrajectoryRow:
        return self.rows[-1]


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Ascent step params + lr * grad."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError("params and grad shapes differ")
    return params + lr * grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim), t=0)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps_hat: float = 1e-8):
    """Bias-corrected adaptive moment ascent step; returns (state, params)."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params + lr * m_hat / (np.sqrt(v_hat) + eps_hat)
    return AdamState(m=m, v=v, t=t), new_params


def _progress(model) -> float:
    if isinstance(model, GaussianToy):
        return model.bd**2 / model.d
    return model.lam


def _gap_estimate(model, alpha: float, n_importance: int, replicates: int,
                  stream: vrng.RngStream) -> tuple[float, float]:
    eps = vrng.standard_normal(stream, (replicates, n_importance, model.d))
    lw = model.log_relative_weight(model.reparam(eps))
    samples = vr_iwae_from_log_weights(lw, alpha)
    se = float(samples.std(ddof=1) / np.sqrt(replicates)) if replicates > 1 else 0.0
    return float(samples.mean()), se


def run_training(model, config: TrainConfig, stream: vrng.RngStream) -> Trajectory:
    """Gradient ascent on the bound; returns the logged trajectory.

    Strictly sequential: every draw (one gradient batch per epoch, plus the
    gap batches at logging points) is consumed from `stream` in a fixed
    order, so identical (model, config, stream) reproduce identical rows.
    Aborts when the gradient norm exceeds 1e8.
    """
    traj = Trajectory(progress_label="bd2_over_d" if isinstance(model, GaussianToy) else "lambda")
    adam_theta = AdamState.zeros(model.theta_dim)
    adam_phi = AdamState.zeros(model.phi_dim)

    def log_row(epoch: int, grad_norm: float):
        gap_mean, gap_se = _gap_estimate(model, config.alpha, config.n_importance,
                                         config.gap_replicates, stream)
        traj.rows.append(TrajectoryRow(epoch=epoch, progress=_progress(model),
                                       gap_mean=gap_mean, gap_se=gap_se,
                                       grad_norm=grad_norm))

    log_row(0, 0.0)
    for epoch in range(1, config.epochs + 1):
        eps = vrng.standard_normal(stream, (1, config.n_importance, model.d))
        g_theta, g_phi = grad_samples_from_eps(model, eps, config.alpha, config.estimator)
        g_theta, g_phi = g_theta[0], g_phi[0]
        norm_sq = 0.0
        if config.train_theta:
            norm_sq += float(np.dot(g_theta, g_theta))
        if config.train_phi:
            norm_sq += float(np.dot(g_phi, g_phi))
        grad_norm = float(np.sqrt(norm_sq))
        if grad_norm > GRAD_NORM_LIMIT:
            raise TrainingDiverged(
                f"gradient norm {grad_norm:.3e} exceeded {GRAD_NORM_LIMIT:.0e} at epoch {epoch}")
        if config.train_theta:
            if config.optimizer == "sgd":
                model = model.with_theta(sgd_step(model.theta_vec, g_theta, config.learning_rate))
            else:
                adam_theta, new_theta = adam_step(adam_theta, model.theta_vec, g_theta,
                                                  config.learning_rate)
                model = model.with_theta(new_theta)
        if config.train_phi:
            if config.optimizer == "sgd":
                model = model.with_phi(sgd_step(model.phi_vec, g_phi, config.learning_rate))
            else:
                adam_phi, new_phi = adam_step(adam_phi, model.phi_vec, g_phi,
                                              config.learning_rate)
                model = model.with_phi(new_phi)
        if epoch % config.log_every == 0 or epoch == config.epochs:
            log_row(epoch, grad_norm)
    return traj
