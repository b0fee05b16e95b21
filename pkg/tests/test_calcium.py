import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from calcium_ensembles.calcium import (
    baseline_moments, ffbs_moments, ffbs_sample_calcium, kalman_filter, log_gamma_target,
    sample_baseline, sample_gamma, sample_sigma2, sample_tau2, sigma2_posterior,
    tau2_posterior,
)


def joint_gaussian_posterior(y, b, gamma, sigma2, tau2, sa, C0):
    """Condition the stacked (c_0..c_T, y_1..y_T) normal directly."""
    T = len(y)
    n = T + 1
    A = np.eye(n)
    A[np.arange(1, n), np.arange(n - 1)] = -gamma
    Ainv = np.linalg.inv(A)
    mu = Ainv @ np.concatenate(([0.0], sa))
    S = Ainv @ np.diag([C0] + [tau2] * T) @ Ainv.T
    H = np.zeros((T, n))
    H[:, 1:] = np.eye(T)
    Syy = H @ S @ H.T + sigma2 * np.eye(T)
    Scy = S @ H.T
    mean = mu + Scy @ np.linalg.solve(Syy, y - b - H @ mu)
    cov = S - Scy @ np.linalg.solve(Syy, Scy.T)
    return mean, cov


class TestFFBS:
    @pytest.mark.parametrize("T", [1, 2, 3, 5])
    def test_moments_match_direct_conditioning(self, T):
        rng = np.random.default_rng(T)
        y = rng.normal(size=T) * 2
        sa = np.where(rng.random(T) < 0.4, 3.0, 0.0)
        args = (y, 0.4, 0.85, 1.3, 0.7, sa, 10.0)
        mean, cov = ffbs_moments(*args)
        ref_mean, ref_cov = joint_gaussian_posterior(*args)
        np.testing.assert_allclose(mean, ref_mean, atol=1e-8)
        np.testing.assert_allclose(cov, ref_cov, atol=1e-8)

    def test_draws_match_moments(self):
        rng = np.random.default_rng(0)
        y = np.array([0.5, 3.1, 2.0, 1.2])
        s = np.array([0, 1, 0, 0])
        a = np.array([0, 2.5, 0, 0])
        mean, cov = ffbs_moments(y, 0.2, 0.9, 1.0, 0.5, s * a, 10.0)
        draws = np.array([ffbs_sample_calcium(y, 0.2, 0.9, 1.0, 0.5, s, a, 10.0, rng)
                          for _ in range(20000)])
        se = np.sqrt(np.diag(cov) / len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05)

    def test_filter_means_match_reference_recursion(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=20)
        sa = rng.random(20)
        q, R, m, C = kalman_filter(y, 0.1, 0.8, 0.9, 0.4, sa, 5.0)
        mm, CC = 0.0, 5.0
        for t in range(20):
            qq = 0.8 * mm + sa[t]
            RR = 0.64 * CC + 0.4
            K = RR / (RR + 0.9)
            mm = qq + K * (y[t] - 0.1 - qq)
            CC = (1 - K) * RR
            assert abs(m[t + 1] - mm) < 1e-10
            assert abs(C[t + 1] - CC) < 1e-10

    def test_tiny_observation_noise_tracks_data(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=8) + 4
        c = ffbs_sample_calcium(y, 1.0, 0.9, 1e-12, 1.0, np.zeros(8), np.zeros(8), 10.0, rng)
        np.testing.assert_allclose(c[1:], y - 1.0, atol=1e-4)

    def test_tiny_state_noise_gives_flat_path(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=8)
        c = ffbs_sample_calcium(y, 0.0, 0.9, 1.0, 1e-12, np.zeros(8), np.zeros(8), 1e-12, rng)
        np.testing.assert_allclose(c, 0.0, atol=1e-4)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            ffbs_sample_calcium(np.zeros(3), 0, 0.9, 0.0, 1.0, np.zeros(3), np.zeros(3), 1.0,
                                np.random.default_rng(0))


class TestConjugateSteps:
    def test_baseline_limits(self):
        y = np.array([[3.0, 4.0, 5.0]])
        c = np.array([[0.0, 1.0, 1.0, 1.0]])
        mean, var = baseline_moments(y, c, 1.0, 2.0, 1e-12)
        assert abs(mean[0] - 2.0) < 1e-9
        mean, var = baseline_moments(y, c, 1.0, 0.0, 1e12)
        assert abs(mean[0] - 3.0) < 1e-9
        with pytest.raises(ValueError):
            baseline_moments(y, c, 1.0, 0.0, 0.0)

    def test_baseline_monte_carlo(self):
        rng = np.random.default_rng(4)
        y = np.array([1.0, 2.5, 0.5, 1.5])
        c = np.array([0.0, 0.2, 0.4, 0.1, 0.3])
        mean, var = baseline_moments(y, c, 1.5, 0.3, 2.0)
        # closed form with w = s2 B0 / (s2 + T B0)
        w = 1.5 * 2.0 / (1.5 + 4 * 2.0)
        assert var == pytest.approx(w, abs=1e-15)
        assert mean[0] == pytest.approx(w * (np.sum(y - c[1:]) / 1.5 + 0.3 / 2.0), abs=1e-15)
        draws = np.array([sample_baseline(y, c, 1.5, 0.3, 2.0, rng) for _ in range(100000)])
        se = math.sqrt(var / len(draws))
        assert abs(draws.mean() - mean[0]) < 3 * se
        assert abs(draws.var() - var) < 3 * var * math.sqrt(2 / len(draws))

    def test_sigma2_parameters(self):
        y = np.array([[1.0, 2.0], [0.0, 1.0]])
        b = np.array([0.5, -0.5])
        c = np.array([[0, 0.5, 1.5], [0, 0.5, 1.5]])
        shape, rate = sigma2_posterior(y, b, c, 2.0, 3.0)
        assert shape == 2.0 + 2.0
        assert rate == pytest.approx(3.0)
        shape, rate = sigma2_posterior(np.array([[2.0]]), np.array([0.0]),
                                       np.array([[0.0, 0.5]]), 2.0, 3.0)
        assert (shape, rate) == (2.5, pytest.approx(3.0 + 1.5 ** 2 / 2))

    def test_tau2_parameters(self):
        c = np.array([[1.0, 0.9, 0.81]])
        shape, rate = tau2_posterior(c, 0.9, np.zeros((1, 2)), 2.0, 2.0)
        assert shape == 3.0
        assert rate == pytest.approx(2.0)
        shape, rate = tau2_posterior(np.array([[0.0, 1.0]]), 0.9, np.zeros((1, 1)), 2.0, 2.0)
        assert rate == pytest.approx(2.5)

    @pytest.mark.parametrize("which", ["sigma2", "tau2"])
    def test_inverse_gamma_monte_carlo(self, which):
        rng = np.random.default_rng(5)
        y = rng.normal(size=(2, 6))
        c = np.hstack([np.zeros((2, 1)), rng.normal(size=(2, 6))])
        if which == "sigma2":
            shape, rate = sigma2_posterior(y, np.zeros(2), c, 2.0, 2.0)
            draws = np.array([sample_sigma2(y, np.zeros(2), c, 2.0, 2.0, rng)
                              for _ in range(100000)])
        else:
            shape, rate = tau2_posterior(c, 0.7, np.zeros((2, 6)), 2.0, 2.0)
            draws = np.array([sample_tau2(c, 0.7, np.zeros((2, 6)), 2.0, 2.0, rng)
                              for _ in range(100000)])
        prec = 1.0 / draws
        mean, var = shape / rate, shape / rate ** 2
        assert abs(prec.mean() - mean) < 3 * math.sqrt(var / len(prec))
        # sampling variance of the sample variance uses the Gamma excess kurtosis 6/shape
        assert abs(prec.var() - var) < 3 * var * math.sqrt((2 + 6 / shape) / len(prec))


class TestGammaStep:
    def test_zero_step_stays(self):
        c = np.array([[0.0, 1.0, 0.9]])
        g, acc = sample_gamma(0.8, c, np.zeros((1, 2)), 1.0, 9.0, 1.0, 0.0, noise=0.7, u=0.999)
        assert g == 0.8 and acc

    def test_long_run_mean_matches_quadrature(self):
        c = np.array([[0.4, 1.5, 0.9]])
        sa = np.array([[1.0, 0.0]])
        stats_ = (0.4 ** 2 + 1.5 ** 2, 0.4 * 0.5 + 1.5 * 0.9)
        dens = lambda g: math.exp(log_gamma_target(g, stats_, 0.5, 2.0, 2.0))
        Z = integrate.quad(dens, 0, 1)[0]
        exact = integrate.quad(lambda g: g * dens(g), 0, 1)[0] / Z
        rng = np.random.default_rng(6)
        g, draws = 0.5, []
        for _ in range(60000):
            g, _ = sample_gamma(g, c, sa, 0.5, 2.0, 2.0, 1.0, rng)
            draws.append(g)
        assert abs(np.mean(draws[2000:]) - exact) < 0.01

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(-3, 3), st.floats(0, 1))
    def test_stays_in_unit_interval(self, g0, noise, u):
        c = np.array([[0.0, 1.0, 2.0, 1.0]])
        g, _ = sample_gamma(g0, c, np.zeros((1, 3)), 1.0, 9.0, 1.0, 0.5, noise=noise, u=u)
        assert 0.0 < g < 1.0
