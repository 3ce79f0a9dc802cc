"""Exact sampler for the Polya-Gamma PG(1, c) distribution.

The sampler follows Devroye's alternating-series method for the Jacobi
distribution J*(1, z): a proposal built from a truncated exponential tail
and a truncated inverse-Gaussian body, accepted by checking the partial
sums of the series representation of the density.  PG(1, c) equals
J*(1, |c|/2) / 4.

Everything hot is compiled with numba and draws from a
``numpy.random.Generator`` that is passed in explicitly, so results are
reproducible from the generator state alone.
"""

from __future__ import annotations

import math

import numba
import numpy as np

__all__ = [
    "TRUNC",
    "MAX_ATTEMPTS",
    "sample_pg1",
    "sample_pg1_array",
    "pg1_mean",
    "pg1_var",
]

#: Switch point between the two series representations of J*.
TRUNC = 0.64
#: Proposals tried before a draw is flagged as anomalous and restarted.
MAX_ATTEMPTS = 200

_PI2_8 = math.pi * math.pi / 8.0
_LOG_HALF_PI = math.log(0.5 * math.pi)
_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _log_norm_cdf(x):
    # Asymptotic tail for very negative x, where erfc underflows.
    if x < -20.0:
        x2 = x * x
        return -0.5 * x2 - math.log(-x) - _LOG_SQRT_2PI + math.log(1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    return math.log(0.5 * math.erfc(-x / _SQRT2))


@numba.njit(cache=True)
def _series_coef(n, x):
    # n-th coefficient of the alternating series for the J*(1) density.
    k = (n + 0.5) * math.pi
    if x > TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x <= 0.0:
        return 0.0
    return math.exp(-1.5 * (_LOG_HALF_PI + math.log(x)) + math.log(k)
                    - 2.0 * (n + 0.5) * (n + 0.5) / x)


@numba.njit(cache=True)
def _prob_exponential_piece(z, fz):
    # Mixture weight of the right (exponential) proposal piece.
    t = TRUNC
    rt = math.sqrt(1.0 / t)
    b = rt * (t * z - 1.0)
    a = -rt * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    ratio = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + ratio)


@numba.njit(cache=True)
def _truncated_inverse_gaussian(z, rng):
    # Inverse Gaussian with mean 1/z and shape 1, restricted to (0, TRUNC).
    t = TRUNC
    if z < 1.0 / t:
        # Mean above the cut: sample 1/chi^2_1 on (0, t) then tilt.
        while True:
            e1 = rng.exponential()
            e2 = rng.exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.exponential()
                e2 = rng.exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            if rng.random() <= math.exp(-0.5 * z * z * x):
                return x
    mu = 1.0 / z
    x = t + 1.0
    while x > t:
        y = rng.standard_normal()
        y = y * y
        mu_y = mu * y
        x = mu + 0.5 * mu * mu_y - 0.5 * mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
        if rng.random() > mu / (mu + x):
            x = mu * mu / x
    return x


@numba.njit(cache=True)
def _draw_one(c, rng, anomalies):
    z = 0.5 * abs(c)
    fz = _PI2_8 + 0.5 * z * z
    p_exp = _prob_exponential_piece(z, fz)
    attempts = 0
    while True:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            anomalies[0] += 1
            attempts = 1
        if rng.random() < p_exp:
            x = TRUNC + rng.exponential() / fz
        else:
            x = _truncated_inverse_gaussian(z, rng)
        s = _series_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _series_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _series_coef(n, x)
                if y > s:
                    break


@numba.njit(cache=True)
def _fill(cs, out, rng, anomalies):
    for i in range(cs.size):
        out[i] = _draw_one(cs[i], rng, anomalies)


def sample_pg1(c, rng):
    """Draw one variate from PG(1, c).

    Parameters
    ----------
    c : float
        Tilting parameter; only ``|c|`` matters.
    rng : numpy.random.Generator

    Returns
    -------
    float
    """
    c = float(c)
    if not math.isfinite(c):
        raise ValueError(f"PG tilting parameter must be finite, got {c!r}")
    out = np.empty(1)
    _fill(np.array([c]), out, rng, np.zeros(1, dtype=np.int64))
    return float(out[0])


def sample_pg1_array(c, rng, return_anomalies=False):
    """Vectorised PG(1, c) draws, one per entry of ``c``.

    Parameters
    ----------
    c : array_like of float
    rng : numpy.random.Generator
    return_anomalies : bool, optional
        Also return how many times a draw exhausted ``MAX_ATTEMPTS``
        proposals and was restarted.

    Returns
    -------
    draws : ndarray, same shape as ``c``
    anomalies : int, only when ``return_anomalies`` is true
    """
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise ValueError("PG tilting parameters must be finite")
    flat = np.ascontiguousarray(c.ravel())
    out = np.empty_like(flat)
    anomalies = np.zeros(1, dtype=np.int64)
    _fill(flat, out, rng, anomalies)
    out = out.reshape(c.shape)
    if return_anomalies:
        return out, int(anomalies[0])
    return out


def pg1_mean(c):
    """Mean of PG(1, c): ``tanh(c/2) / (2c)``, with limit 1/4 at zero."""
    c = np.abs(np.asarray(c, dtype=np.float64))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    return np.where(small, 0.25 - c * c / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))


def pg1_var(c):
    """Variance of PG(1, c).

    Uses ``(sinh(c) - c) / (4 c^3 cosh(c/2)^2)``, with limit 1/24 at zero.
    Written as ``(2 tanh(c/2) - c sech(c/2)^2) / (4 c^3)`` to avoid overflow.
    """
    c = np.abs(np.asarray(c, dtype=np.float64))
    small = c < 1e-2
    safe = np.where(small, 1.0, c)
    with np.errstate(over="ignore"):
        sech2 = 1.0 / np.cosh(safe / 2.0) ** 2
    full = (2.0 * np.tanh(safe / 2.0) - safe * sech2) / (4.0 * safe**3)
    return np.where(small, 1.0 / 24.0 - c * c / 120.0, full)
