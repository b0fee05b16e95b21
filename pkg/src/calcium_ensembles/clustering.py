"""Spatial probit stick-breaking clustering of neurons with Gaussian-process atoms.

Cluster labels are 0-based internally (``0 .. K_max - 1``).  Each cluster owns
a latent activation path ``gp_atoms[k]`` whose probit gives the spike
probability of its member neurons at every frame.  Mixing weights depend on
neuron location through the latent fields ``psbp_alpha[k]``, which have a
squared-exponential proximity covariance across neurons.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import pdist, squareform
from scipy.special import log_ndtr, ndtri

from ._random import categorical_from_logits, truncnorm_signed

JITTER = 1e-8


def squared_distances(locations):
    locations = np.asarray(locations, dtype=float)
    if locations.ndim != 2 or not np.all(np.isfinite(locations)):
        raise ValueError("locations must be a finite (n, d) array")
    if len(locations) < 2:
        return np.zeros((len(locations), len(locations)))
    return squareform(pdist(locations, "sqeuclidean"))


def proximity_matrix(locations, theta):
    """``exp(-theta * ||l_i - l_j||^2)``; no jitter is added here."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    with np.errstate(under="ignore"):
        return np.exp(-theta * squared_distances(locations))


def auto_theta(locations, median_proximity=0.05):
    """Decay giving a median off-diagonal proximity of ``median_proximity``."""
    d2 = squared_distances(locations)
    off = d2[np.triu_indices(len(d2), 1)]
    med = np.median(off) if off.size else 0.0
    if med <= 0:
        return 1.0
    return float(-np.log(median_proximity) / med)


def log_psbp_weights(psbp_alpha):
    """Log stick-breaking weights, ``K x n``; the last row takes the remainder."""
    alpha = np.atleast_2d(np.asarray(psbp_alpha, dtype=float))
    log_on = log_ndtr(alpha)
    log_off = log_ndtr(-alpha)
    before = np.vstack([np.zeros((1, alpha.shape[1])), np.cumsum(log_off[:-1], axis=0)])
    out = log_on + before
    out[-1] = before[-1]
    return out


def psbp_weights(psbp_alpha):
    """Probit stick-breaking weights ``pi_k`` for one column or a ``K x n`` matrix.

    The weights of each neuron sum to one up to rounding: the final component
    receives whatever the first ``K - 1`` sticks leave.
    """
    alpha = np.asarray(psbp_alpha, dtype=float)
    w = np.exp(log_psbp_weights(alpha.reshape(alpha.shape[0], -1)))
    return w.reshape(alpha.shape)


def cluster_loglik(s, gp_atoms):
    """``log p(s_i | atom k)`` for every neuron and cluster, ``n x K``."""
    s = np.asarray(s, dtype=float)
    gp_atoms = np.atleast_2d(gp_atoms)
    return s @ log_ndtr(gp_atoms).T + (1.0 - s) @ log_ndtr(-gp_atoms).T


def allocation_logits(s, gp_atoms, log_weights):
    return cluster_loglik(s, gp_atoms) + np.asarray(log_weights).T


def sample_cluster_allocations(s, gp_atoms, log_weights, rng=None, u=None):
    """Draw ``zeta_i`` with probability proportional to ``pi_k(l_i) p(s_i | atom k)``."""
    logits = allocation_logits(s, gp_atoms, log_weights)
    if u is None:
        u = rng.random(logits.shape[0])
    return categorical_from_logits(logits, u)


class PSBPPosterior:
    """Precomputed Gaussian update for the location-dependent stick fields.

    Given augmented data ``z_k ~ N(alpha_k, sigma2_alpha I)`` and prior
    ``alpha_k ~ N(mu_alpha 1, Sigma)``, the conditional of ``alpha_k`` has
    covariance ``(Sigma^-1 + I/s)^-1 = s Sigma (Sigma + s I)^-1`` and mean
    ``s (Sigma + s I)^-1 mu 1 + Sigma (Sigma + s I)^-1 z``.  Both are formed
    from one eigendecomposition of ``Sigma``, which avoids inverting a nearly
    singular proximity matrix.
    """

    def __init__(self, proximity, mu_alpha=0.0, sigma2_alpha=1.0):
        proximity = np.asarray(proximity, dtype=float)
        n = proximity.shape[0]
        lam, vec = np.linalg.eigh(proximity + JITTER * np.eye(n))
        if not np.all(np.isfinite(lam)):
            raise np.linalg.LinAlgError(
                "proximity eigendecomposition failed; increase jitter or theta")
        lam = np.maximum(lam, JITTER)
        s = sigma2_alpha
        self.gain = (vec * (lam / (lam + s))) @ vec.T
        self.prior_mean = (vec * (s / (lam + s))) @ (vec.T @ np.full(n, mu_alpha))
        self.cov_root = vec * np.sqrt(s * lam / (lam + s))
        self.cov = self.cov_root @ self.cov_root.T
        self.prior_root = vec * np.sqrt(lam)
        self.mu_alpha = mu_alpha
        self.sigma2_alpha = sigma2_alpha

    def mean(self, z):
        """Conditional mean for augmented rows ``z`` (``K x n``)."""
        return self.prior_mean + np.atleast_2d(z) @ self.gain.T

    def sample(self, z, eps):
        return self.mean(z) + eps @ self.cov_root.T

    def prior_sample(self, eps):
        return self.mu_alpha + eps @ self.prior_root.T


def augment_stick_latents(zeta, psbp_alpha, u):
    """Truncated-normal augmentation of the stick fields.

    ``z_k(l_i)`` is negative for ``k < zeta_i``, positive for ``k = zeta_i``
    and unconstrained for ``k > zeta_i`` (and for the final remainder
    component), where it carries no information about the allocation.
    """
    alpha = np.asarray(psbp_alpha, dtype=float)
    K, n = alpha.shape
    k = np.arange(K)[:, None]
    zeta = np.asarray(zeta)[None, :]
    before = k < zeta
    at = (k == zeta) & (k < K - 1)
    constrained = before | at
    z = np.empty_like(alpha)
    z[constrained] = truncnorm_signed(alpha[constrained], at[constrained], u[constrained])
    free = ~constrained
    # inverse-CDF of N(alpha, 1) from the same uniforms
    z[free] = alpha[free] + ndtri(np.clip(u[free], 1e-300, 1 - 1e-16))
    return z


def sample_psbp_latents(zeta, psbp_alpha, posterior: PSBPPosterior, rng):
    """Redraw every row of ``psbp_alpha`` given the allocations."""
    alpha = np.asarray(psbp_alpha, dtype=float)
    u = rng.random(alpha.shape)
    eps = rng.standard_normal(alpha.shape)
    z = augment_stick_latents(zeta, alpha, u)
    return posterior.sample(z, eps)


def gp_covariance(T, variance=1.0, lengthscale=3.0):
    """Squared-exponential covariance over frames ``0..T-1`` plus 1e-8 jitter."""
    if not (variance > 0 and lengthscale > 0):
        raise ValueError("variance and lengthscale must be positive")
    t = np.arange(T, dtype=float)
    d = t[:, None] - t[None, :]
    return variance * np.exp(-d * d / (2.0 * lengthscale ** 2)) + JITTER * np.eye(T)


def vecchia_coefficients(omega, p):
    """Conditioning weights and variances of each frame given its ``h`` predecessors.

    For frame ``t`` (0-based) ``h = min(t, p)``.  Returns ``(weights, cond_var)``
    where ``weights[t]`` multiplies ``[x_{t-h}, ..., x_{t-1}]``.
    """
    omega = np.asarray(omega, dtype=float)
    T = omega.shape[0]
    if not 1 <= p <= max(T - 1, 1):
        raise ValueError(f"conditioning depth must be in [1, T-1], got {p}")
    weights, cond_var = [], np.empty(T)
    for t in range(T):
        h = min(t, p)
        if h == 0:
            weights.append(np.zeros(0))
            cond_var[t] = omega[t, t]
            continue
        past = slice(t - h, t)
        sub = omega[past, past]
        cross = omega[past, t]
        try:
            w = cho_solve(cho_factor(sub, lower=True), cross)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular conditioning block at frame {t}") from exc
        weights.append(w)
        cond_var[t] = omega[t, t] - cross @ w
        if not cond_var[t] > 0:
            raise np.linalg.LinAlgError(f"non-positive conditional variance at frame {t}")
    return weights, cond_var


class VecchiaGP:
    """Sparse sequential approximation of a GP prior over ``T`` frames.

    ``x_t = mu + sum_j B[t, j] (x_j - mu) + e_t`` with ``e_t ~ N(0, D_t)`` and
    ``B`` strictly lower triangular with bandwidth ``p``.
    """

    def __init__(self, omega, p, mean=0.0):
        self.weights, self.cond_var = vecchia_coefficients(omega, p)
        T = len(self.cond_var)
        self.T = T
        self.p = p
        self.mean = float(mean)
        B = np.zeros((T, T))
        for t, w in enumerate(self.weights):
            B[t, t - len(w):t] = w
        self.B = B
        IB = np.eye(T) - B
        self.precision = IB.T @ (IB / self.cond_var[:, None])
        # prior draws: x - mu = (I - B)^-1 D^1/2 eps
        self.prior_root = solve_triangular(IB, np.diag(np.sqrt(self.cond_var)), lower=True)
        self._chol = {}

    @property
    def covariance(self):
        return self.prior_root @ self.prior_root.T

    def prior_sample(self, eps):
        return self.mean + np.atleast_2d(eps) @ self.prior_root.T

    def _factor(self, n):
        if n not in self._chol:
            P = self.precision + n * np.eye(self.T)
            self._chol[n] = np.linalg.cholesky(P)
        return self._chol[n]

    def posterior(self, n, z_sum):
        """Mean and covariance of the path given ``n`` unit-variance observations per frame."""
        L = self._factor(n)
        rhs = self.precision @ np.full(self.T, self.mean) + np.asarray(z_sum, dtype=float)
        mean = cho_solve((L, True), rhs)
        Linv = solve_triangular(L, np.eye(self.T), lower=True)
        return mean, Linv.T @ Linv

    def posterior_sample(self, n, z_sum, eps):
        L = self._factor(n)
        rhs = self.precision @ np.full(self.T, self.mean) + np.asarray(z_sum, dtype=float)
        mean = cho_solve((L, True), rhs)
        return mean + solve_triangular(L.T, eps, lower=False)

    def sequential_sample(self, n, z_sum, eps):
        """Forward draw conditioning each frame only on its predecessors and own data.

        Vectorized over rows of ``n``/``z_sum``/``eps``.  Exact for the prior
        (``n = 0``); with data it ignores what later frames say about earlier ones.
        """
        n = np.atleast_1d(np.asarray(n, dtype=float))
        z_sum = np.atleast_2d(z_sum)
        eps = np.atleast_2d(eps)
        x = np.empty_like(z_sum, dtype=float)
        for t in range(self.T):
            w = self.weights[t]
            mu_t = self.mean + (x[:, t - len(w):t] - self.mean) @ w if len(w) else \
                np.full(len(n), self.mean)
            var_t = self.cond_var[t]
            v = var_t / (1.0 + n * var_t)
            x[:, t] = v * (mu_t / var_t + z_sum[:, t]) + np.sqrt(v) * eps[:, t]
        return x


def augment_activation_latents(s, stilde, u):
    """Albert-Chib latents: positive where the neuron spiked, negative elsewhere."""
    return truncnorm_signed(stilde, np.asarray(s) > 0, u)


def sample_gp_atoms(zeta, s, gp_atoms, vecchia: VecchiaGP, rng, method="joint"):
    """Redraw every cluster's activation path.

    Occupied clusters get augmented latents for all member neurons and frames,
    then a draw of the whole path given their per-frame sums (``method="joint"``
    samples the exact Gaussian conditional under the sparse prior;
    ``"sequential"`` samples frame by frame forward).  Empty clusters are
    redrawn from the prior.
    """
    gp_atoms = np.asarray(gp_atoms, dtype=float)
    K, T = gp_atoms.shape
    zeta = np.asarray(zeta)
    u = rng.random(np.shape(s))
    eps = rng.standard_normal((K, T))
    z = augment_activation_latents(s, gp_atoms[zeta], u)
    counts = np.bincount(zeta, minlength=K)
    z_sum = np.zeros((K, T))
    np.add.at(z_sum, zeta, z)
    return _atom_paths(counts, z_sum, eps, vecchia, method)


def _atom_paths(counts, z_sum, eps, vecchia, method):
    K = len(counts)
    out = np.empty_like(z_sum)
    empty = counts == 0
    if empty.any():
        out[empty] = vecchia.prior_sample(eps[empty])
    occupied = np.flatnonzero(~empty)
    if method == "joint":
        for k in occupied:
            out[k] = vecchia.posterior_sample(int(counts[k]), z_sum[k], eps[k])
    elif method == "sequential":
        if occupied.size:
            out[occupied] = vecchia.sequential_sample(counts[occupied], z_sum[occupied],
                                                      eps[occupied])
    else:
        raise ValueError(f"unknown GP atom update {method!r}")
    return out
