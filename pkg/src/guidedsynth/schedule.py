"""Linear noise schedule and the closed-form forward process.

The forward SDE is ``dx = 0.5 * (mu - x) * beta(t) dt + sqrt(beta(t)) dw`` on
``t in [0, 1]``. Given a clean frame matrix ``x0`` its marginal is Gaussian with
mean ``(1 - e^{-I/2}) mu + e^{-I/2} x0`` and isotropic variance ``1 - e^{-I}``,
where ``I(t)`` is the integral of beta from 0 to t.

All quantities here are float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "NoiseSchedule",
    "ForwardMoments",
    "beta_at",
    "beta_integral",
    "moments_at",
    "forward_sample",
    "true_score_gaussian",
    "gaussian_marginal",
]


@dataclass(frozen=True)
class NoiseSchedule:
    beta0: float = 0.05
    beta1: float = 20.0

    def __post_init__(self):
        if not (0.0 < self.beta0 < self.beta1):
            raise DomainError(
                f"need 0 < beta0 < beta1, got beta0={self.beta0}, beta1={self.beta1}"
            )

    def beta(self, t):
        return beta_at(self, t)

    def integral(self, t):
        return beta_integral(self, t)

    def moments(self, t):
        return moments_at(self, t)

    def sigma(self, t):
        """Standard deviation of the forward transition at ``t``."""
        return np.sqrt(moments_at(self, t).sigma2)


@dataclass(frozen=True)
class ForwardMoments:
    rho_coeff_mu: float | np.ndarray
    rho_coeff_x0: float | np.ndarray
    sigma2: float | np.ndarray


def _check_t(t):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    return arr


def _as_scalar(arr):
    return float(arr) if arr.ndim == 0 else arr


def beta_at(sched: NoiseSchedule, t):
    """Noise rate ``beta0 + (beta1 - beta0) * t``. Accepts scalars or arrays."""
    t = _check_t(t)
    return _as_scalar(sched.beta0 + (sched.beta1 - sched.beta0) * t)


def beta_integral(sched: NoiseSchedule, t):
    """Integral of ``beta`` over ``[0, t]``."""
    t = _check_t(t)
    return _as_scalar(sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t)


def moments_at(sched: NoiseSchedule, t) -> ForwardMoments:
    t = _check_t(t)
    integral = sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t
    c_x0 = np.exp(-0.5 * integral)
    # -expm1 keeps sigma2 accurate near t = 0 where it is O(beta0 * t)
    return ForwardMoments(
        rho_coeff_mu=_as_scalar(-np.expm1(-0.5 * integral)),
        rho_coeff_x0=_as_scalar(c_x0),
        sigma2=_as_scalar(-np.expm1(-integral)),
    )


def forward_sample(sched, t, x0, mu, noise):
    """Draw ``x_t`` from ``x0`` with caller-supplied standard normal ``noise``.

    ``t`` may be a scalar or one value per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not (x0.shape == mu.shape == noise.shape):
        raise ShapeError(
            f"x0 {x0.shape}, mu {mu.shape} and noise {noise.shape} must share a shape"
        )
    m = moments_at(sched, t)
    c_mu, c_x0, s2 = (np.asarray(v, dtype=np.float64) for v in (m.rho_coeff_mu, m.rho_coeff_x0, m.sigma2))
    if c_mu.ndim == 1:
        if x0.ndim < 1 or c_mu.shape[0] != x0.shape[0]:
            raise ShapeError(f"per-row t needs {x0.shape[0]} values, got {c_mu.shape[0]}")
        c_mu, c_x0, s2 = c_mu[:, None], c_x0[:, None], s2[:, None]
    return c_mu * mu + c_x0 * x0 + np.sqrt(s2) * noise


def gaussian_marginal(sched, t, mu, data_mean, data_cov_diag):
    """Mean and variance of ``x_t`` when ``x0 ~ N(data_mean, diag(data_cov_diag))``."""
    data_cov_diag = np.asarray(data_cov_diag, dtype=np.float64)
    if np.any(data_cov_diag <= 0.0):
        raise DomainError("data_cov_diag must be elementwise positive")
    m = moments_at(sched, t)
    mean = m.rho_coeff_mu * np.asarray(mu, dtype=np.float64) + m.rho_coeff_x0 * np.asarray(
        data_mean, dtype=np.float64
    )
    var = m.rho_coeff_x0**2 * data_cov_diag + m.sigma2
    return mean, var


def true_score_gaussian(sched, t, x_t, mu, data_mean, data_cov_diag):
    """Exact score of ``x_t`` under a diagonal-Gaussian data distribution."""
    mean, var = gaussian_marginal(sched, t, mu, data_mean, data_cov_diag)
    return -(np.asarray(x_t, dtype=np.float64) - mean) / var
