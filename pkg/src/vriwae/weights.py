"""Importance log-weight container and degeneracy diagnostics.

All statistics here are computed in the log domain with max-subtraction; the
interesting regimes put hundreds of nats between the largest and smallest
weight, so linear-domain arithmetic would overflow long before the diagnostics
become informative.

Conventions fixed once for the whole artifact:

* the dominance statistic at order alpha is
      T = sum_{j != argmax} exp((1 - alpha) * (lw_j - lw_max)),
  i.e. the (1-alpha)-power ratios of all non-maximal weights to the maximal
  one.  Ties are broken by original index (first occurrence wins); T is
  invariant to the choice among exact ties.
* QQ plotting positions are (i - 0.5) / n against the standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp, ndtri

__all__ = [
    "LogWeights",
    "WeightDiagnostics",
    "QQResult",
    "relative_log_weights",
    "t_statistic",
    "max_weight_share",
    "ess",
    "qq_points",
    "log_weight_moments",
    "diagnostics",
]


@dataclass
class LogWeights:
    """A batch of N importance log-weights (nats).

    `values` holds log of the unnormalized weights; `log_marginal`, when
    known, is the exact log normalizer so that values - log_marginal are the
    relative log-weights (whose weights have unit mean under the proposal).
    """

    values: np.ndarray
    log_marginal: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("values must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("log-weights must all be finite")

    @property
    def n(self) -> int:
        return self.values.size


@dataclass
class WeightDiagnostics:
    """Collapse metrics of one weight batch at a given alpha."""

    t_stat: float
    max_share: float
    ess: float
    log_mean: float
    log_std: float


class QQResult(NamedTuple):
    theoretical: np.ndarray
    sample: np.ndarray
    correlation: float


def relative_log_weights(lw: LogWeights) -> np.ndarray:
    """Log-weights shifted by the exact log normalizer, order preserved."""
    if lw.log_marginal is None:
        raise ValueError("log_marginal is required to form relative weights")
    return lw.values - lw.log_marginal


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    return float(alpha)


def t_statistic(lw: LogWeights, alpha: float) -> float:
    """Sum of (w_j / w_max)^(1-alpha) over the non-maximal weights.

    Lies in [0, N-1]; shift-invariant, so it does not matter whether `lw`
    carries normalized or unnormalized values.  Small values mean the largest
    weight dominates the batch.
    """
    alpha = _check_alpha(alpha)
    v = lw.values
    i_max = int(np.argmax(v))  # ties: first occurrence
    if v.size == 1:
        return 0.0
    rest = np.delete(v, i_max)
    return float(np.sum(np.exp((1.0 - alpha) * (rest - v[i_max]))))


def max_weight_share(lw: LogWeights) -> float:
    """w_max / sum_j w_j, equal to 1 / (1 + T at alpha=0)."""
    v = lw.values
    return float(np.exp(np.max(v) - logsumexp(v)))


def ess(lw: LogWeights) -> float:
    """Effective sample size (sum w)^2 / sum w^2, in [1, N]."""
    v = lw.values
    return float(np.exp(2.0 * logsumexp(v) - logsumexp(2.0 * v)))


def qq_points(log_weights: np.ndarray) -> QQResult:
    """Normal QQ pairs for a sample of log-weights.

    The sample is standardized, sorted (stable), and paired with standard
    normal quantiles at plotting positions (i - 0.5) / n.  The Pearson
    correlation of the pairs is the scalar normality summary used throughout.
    """
    x = np.asarray(log_weights, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 points for a QQ plot")
    mean = x.mean()
    std = x.std(ddof=1)
    if std == 0.0:
        raise ValueError("sample variance is zero")
    sample = np.sort((x - mean) / std, kind="stable")
    n = x.size
    theo = ndtri((np.arange(1, n + 1) - 0.5) / n)
    corr = float(np.corrcoef(theo, sample)[0, 1])
    return QQResult(theoretical=theo, sample=sample, correlation=corr)


def log_weight_moments(log_weights: np.ndarray) -> tuple[float, float]:
    """Sample mean and unbiased sample standard deviation."""
    x = np.asarray(log_weights, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 points")
    return float(x.mean()), float(x.std(ddof=1))


def diagnostics(lw: LogWeights, alpha: float) -> WeightDiagnostics:
    """All collapse metrics of one batch in a single pass."""
    mean, std = (float(lw.values.mean()), float(lw.values.std(ddof=1))) if lw.n >= 2 else (float(lw.values[0]), 0.0)
    return WeightDiagnostics(
        t_stat=t_statistic(lw, alpha),
        max_share=max_weight_share(lw),
        ess=ess(lw),
        log_mean=mean,
        log_std=std,
    )
