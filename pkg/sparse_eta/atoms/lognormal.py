"""
Moment matching between (mean, std) travel times and lognormal parameters.

A travel time with mean ``mu`` and standard deviation ``sigma`` (seconds) is
represented by ``Lognormal(log_mu, log_sigma)``, where ``log_mu`` and
``log_sigma`` are the mean and std of the underlying normal. Sums of such
variables are approximated by a lognormal with summed mean and summed
variance (Fenton-Wilkinson style).
"""

from typing import Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


def to_lognormal(mu: ArrayLike, sigma: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """
    Convert a mean/std pair into lognormal ``(log_mu, log_sigma)``.

    ``log_sigma**2 = ln(1 + sigma**2 / mu**2)`` and
    ``log_mu = ln(mu) - log_sigma**2 / 2``. ``sigma = 0`` gives a point mass.

    Example:
        >>> log_mu, log_sigma = to_lognormal(100.0, 15.0)
        >>> round(float(log_sigma ** 2), 5), round(float(log_mu), 4)
        (0.02225, 4.594)
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(mu <= 0.0) or np.any(sigma < 0.0):
        raise ValueError("to_lognormal requires mu > 0 and sigma >= 0")
    log_var = np.log1p((sigma / mu) ** 2)
    log_mu = np.log(mu) - 0.5 * log_var
    log_sigma = np.sqrt(log_var)
    if log_mu.ndim == 0:
        return float(log_mu), float(log_sigma)
    return log_mu, log_sigma


def lognormal_moments(log_mu: ArrayLike, log_sigma: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Mean and standard deviation of ``Lognormal(log_mu, log_sigma)``."""
    log_mu = np.asarray(log_mu, dtype=float)
    log_sigma = np.asarray(log_sigma, dtype=float)
    log_var = log_sigma ** 2
    mean = np.exp(log_mu + 0.5 * log_var)
    std = mean * np.sqrt(np.expm1(log_var))
    if mean.ndim == 0:
        return float(mean), float(std)
    return mean, std


def sample_truncated_lognormal(
    mu: float,
    sigma: float,
    rng: np.random.Generator,
    low_factor: float = 0.25,
    high_factor: float = 4.0,
    max_tries: int = 64,
) -> float:
    """
    Draw one travel time with moments ``(mu, sigma)``, truncated to
    ``[low_factor * mu, high_factor * mu]`` by rejection.

    ``sigma == 0`` returns ``mu`` exactly. After ``max_tries`` rejections the
    last draw is clipped into the window.
    """
    if sigma <= 0.0:
        return float(mu)
    log_mu, log_sigma = to_lognormal(mu, sigma)
    low, high = low_factor * mu, high_factor * mu
    draw = mu
    for _ in range(max_tries):
        draw = float(rng.lognormal(mean=log_mu, sigma=log_sigma))
        if low <= draw <= high:
            return draw
    return float(min(max(draw, low), high))
