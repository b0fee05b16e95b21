"""Gibbs updates for the biophysical layer.

Observation and state equations::

    y[i, t] = b[i] + c[i, t] + eps,      eps ~ N(0, sigma2)
    c[i, t] = gamma * c[i, t-1] + s[i, t] * a[i, t] + eta,   eta ~ N(0, tau2)

Calcium paths carry ``T + 1`` entries; column 0 is the initial state
``c[i, 0] ~ N(0, C0)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _filter_row(y, b, gamma, sigma2, tau2, sa, C0, q, R, m, C):
    T = y.shape[0]
    m[0] = 0.0
    C[0] = C0
    q[0] = 0.0
    R[0] = C0
    for t in range(1, T + 1):
        q[t] = gamma * m[t - 1] + sa[t - 1]
        R[t] = gamma * gamma * C[t - 1] + tau2
        gain = R[t] / (R[t] + sigma2)
        m[t] = q[t] + gain * (y[t - 1] - b - q[t])
        C[t] = R[t] * sigma2 / (R[t] + sigma2)


@njit(cache=True, nogil=True)
def _ffbs_rows(y, b, gamma, sigma2, tau2, sa, C0, eps, out):
    n, T = y.shape
    q = np.empty(T + 1)
    R = np.empty(T + 1)
    m = np.empty(T + 1)
    C = np.empty(T + 1)
    for i in range(n):
        _filter_row(y[i], b[i], gamma, sigma2, tau2, sa[i], C0, q, R, m, C)
        out[i, T] = m[T] + math.sqrt(C[T]) * eps[i, T]
        for t in range(T - 1, -1, -1):
            back = gamma * C[t] / R[t + 1]
            h = m[t] + back * (out[i, t + 1] - q[t + 1])
            # C - gamma^2 C^2 / R simplifies to C * tau2 / R
            H = C[t] * tau2 / R[t + 1]
            out[i, t] = h + math.sqrt(H) * eps[i, t]


def _check_variances(sigma2, tau2, C0=1.0):
    if not (sigma2 > 0 and tau2 > 0 and C0 > 0):
        raise ValueError(f"variances must be positive (sigma2={sigma2}, tau2={tau2}, C0={C0})")


def kalman_filter(y, b, gamma, sigma2, tau2, sa, C0):
    """Forward recursions for one neuron.

    Returns ``(q, R, m, C)``, each of length ``T + 1``: one-step predictive
    mean and variance, filtered mean and variance (index 0 is the prior).
    """
    _check_variances(sigma2, tau2, C0)
    y = np.ascontiguousarray(y, dtype=float)
    T = y.shape[0]
    out = [np.empty(T + 1) for _ in range(4)]
    _filter_row(y, float(b), float(gamma), float(sigma2), float(tau2),
                np.ascontiguousarray(sa, dtype=float), float(C0), *out)
    return tuple(out)


def ffbs_moments(y, b, gamma, sigma2, tau2, sa, C0):
    """Exact mean and covariance of the path produced by backward sampling.

    The backward pass draws ``c_T ~ N(m_T, C_T)`` and then
    ``c_t | c_{t+1} ~ N(m_t + J_t (c_{t+1} - q_{t+1}), H_t)``; this propagates
    those linear-Gaussian conditionals analytically.
    """
    q, R, m, C = kalman_filter(y, b, gamma, sigma2, tau2, sa, C0)
    T = len(y)
    mean = np.empty(T + 1)
    cov = np.zeros((T + 1, T + 1))
    mean[T] = m[T]
    cov[T, T] = C[T]
    for t in range(T - 1, -1, -1):
        J = gamma * C[t] / R[t + 1]
        H = C[t] * tau2 / R[t + 1]
        mean[t] = m[t] + J * (mean[t + 1] - q[t + 1])
        cov[t, t + 1:] = J * cov[t + 1, t + 1:]
        cov[t + 1:, t] = cov[t, t + 1:]
        cov[t, t] = H + J * J * cov[t + 1, t + 1]
    return mean, cov


def ffbs_sample_calcium(y_i, b_i, gamma, sigma2, tau2, s_i, a_i, C0, rng):
    """Draw one neuron's calcium path ``c[0..T]`` from its full conditional."""
    _check_variances(sigma2, tau2, C0)
    y = np.ascontiguousarray(y_i, dtype=float)[None, :]
    sa = (np.asarray(s_i, dtype=float) * np.asarray(a_i, dtype=float))[None, :]
    eps = rng.standard_normal((1, y.shape[1] + 1))
    out = np.empty_like(eps)
    _ffbs_rows(y, np.array([float(b_i)]), float(gamma), float(sigma2), float(tau2),
               np.ascontiguousarray(sa), float(C0), eps, out)
    return out[0]


def ffbs_sample_block(y, b, gamma, sigma2, tau2, sa, C0, eps, out):
    """Batched FFBS over rows, writing into ``out``; ``eps`` holds the N(0,1) noise."""
    _ffbs_rows(y, b, float(gamma), float(sigma2), float(tau2), sa, float(C0), eps, out)


def baseline_moments(y, c, sigma2, b0, B0):
    """Mean and variance of the baseline full conditional (vectorized over rows)."""
    if not B0 > 0:
        raise ValueError("B0 must be positive")
    y = np.atleast_2d(y)
    c = np.atleast_2d(c)
    T = y.shape[1]
    w = sigma2 * B0 / (sigma2 + T * B0)
    mean = w * ((y - c[:, -T:]).sum(axis=1) / sigma2 + b0 / B0)
    return mean, w


def sample_baseline(y_i, c_i, sigma2, b0, B0, rng):
    """``c_i`` may include the initial state; only the last ``T`` entries are used."""
    mean, var = baseline_moments(y_i, c_i, sigma2, b0, B0)
    return float(mean[0] + math.sqrt(var) * rng.standard_normal())


def sigma2_posterior(y, b, c, alpha_sigma, beta_sigma):
    """Shape and rate of the Gamma full conditional of ``1 / sigma2``."""
    y = np.atleast_2d(y)
    resid = y - np.asarray(b).reshape(-1, 1) - np.atleast_2d(c)[:, -y.shape[1]:]
    return alpha_sigma + y.size / 2.0, beta_sigma + 0.5 * float(np.sum(resid * resid))


def sample_sigma2(y, b, c, alpha_sigma, beta_sigma, rng):
    shape, rate = sigma2_posterior(y, b, c, alpha_sigma, beta_sigma)
    return 1.0 / rng.gamma(shape, 1.0 / rate)


def state_residuals(c, gamma, sa):
    c = np.atleast_2d(c)
    return c[:, 1:] - gamma * c[:, :-1] - np.atleast_2d(sa)


def tau2_posterior(c, gamma, sa, alpha_tau, beta_tau):
    """Shape and rate of the Gamma full conditional of ``1 / tau2``."""
    resid = state_residuals(c, gamma, sa)
    return alpha_tau + resid.size / 2.0, beta_tau + 0.5 * float(np.sum(resid * resid))


def sample_tau2(c, gamma, sa, alpha_tau, beta_tau, rng):
    shape, rate = tau2_posterior(c, gamma, sa, alpha_tau, beta_tau)
    return 1.0 / rng.gamma(shape, 1.0 / rate)


def gamma_sufficient_stats(c, sa):
    """``(sum c_{t-1}^2, sum c_{t-1} (c_t - s a))`` over all neurons and frames."""
    c = np.atleast_2d(c)
    prev = c[:, :-1]
    return float(np.sum(prev * prev)), float(np.sum(prev * (c[:, 1:] - np.atleast_2d(sa))))


def log_gamma_target(gamma, stats, tau2, alpha_gamma, beta_gamma):
    """Unnormalized log density of the decay full conditional."""
    if not 0.0 < gamma < 1.0:
        return -np.inf
    sxx, sxy = stats
    return (-(gamma * gamma * sxx - 2.0 * gamma * sxy) / (2.0 * tau2)
            + (alpha_gamma - 1.0) * math.log(gamma) + (beta_gamma - 1.0) * math.log1p(-gamma))


def sample_gamma(gamma, c, sa, tau2, alpha_gamma, beta_gamma, step, rng=None,
                 noise=None, u=None):
    """One random-walk Metropolis step on ``logit(gamma)``.

    Returns ``(new_gamma, accepted)``.  ``noise``/``u`` may be supplied in place
    of ``rng`` (a standard normal and a uniform).
    """
    if noise is None:
        noise = rng.standard_normal()
        u = rng.random()
    stats = gamma_sufficient_stats(c, sa)
    logit = math.log(gamma) - math.log1p(-gamma)
    prop_logit = logit + step * noise
    prop = 1.0 / (1.0 + math.exp(-prop_logit))
    if not 0.0 < prop < 1.0:
        return gamma, False
    log_ratio = (log_gamma_target(prop, stats, tau2, alpha_gamma, beta_gamma)
                 - log_gamma_target(gamma, stats, tau2, alpha_gamma, beta_gamma)
                 + math.log(prop) + math.log1p(-prop) - math.log(gamma) - math.log1p(-gamma))
    if math.log(max(u, 1e-300)) < log_ratio:
        return prop, True
    return gamma, False
