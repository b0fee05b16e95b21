"""Spike/amplitude allocation under the spike-and-slab Dirichlet process.

Allocation ``xi[i, t] = 0`` means no spike; ``xi[i, t] = j >= 1`` means a
spike with amplitude ``amp_atoms[j - 1]``.  The DP is truncated at ``J_max``
atoms with the last stick fixed to one.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.special import log_ndtr


def dp_weights(sticks):
    """Stick-breaking weights ``w_j = v_j prod_{r<j} (1 - v_r)``."""
    sticks = np.asarray(sticks, dtype=float)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - sticks[:-1])))
    return sticks * remaining


def spikes_and_amplitudes(xi, amp_atoms):
    """Implied ``(s, a)`` matrices of an allocation matrix."""
    xi = np.asarray(xi)
    table = np.concatenate(([0.0], np.asarray(amp_atoms, dtype=float)))
    return (xi > 0).astype(np.int8), table[xi]


def allocation_logits(resid, stilde, amp_atoms, weights, tau2):
    """Unnormalized log probabilities of ``xi`` over ``0..J`` for every (i, t).

    ``resid`` is ``c_t - gamma c_{t-1}`` and ``stilde`` the latent activation
    of each neuron's cluster at each frame, both ``n x T``.
    """
    resid = np.asarray(resid, dtype=float)[..., None]
    stilde = np.asarray(stilde, dtype=float)
    atoms = np.concatenate(([0.0], np.asarray(amp_atoms, dtype=float)))
    with np.errstate(divide="ignore"):
        log_w = np.concatenate(([0.0], np.log(np.asarray(weights, dtype=float))))
    prior = np.concatenate(
        [log_ndtr(-stilde)[..., None],
         log_ndtr(stilde)[..., None] + log_w[1:]], axis=-1)
    prior[..., 0] += log_w[0]
    return prior - (resid - atoms) ** 2 / (2.0 * tau2)


@njit(cache=True, nogil=True)
def _allocate_rows(resid, log_on, log_off, atoms, log_w, inv2tau2, u, out):
    n, T = resid.shape
    J = atoms.shape[0]
    buf = np.empty(J + 1)
    for i in range(n):
        for t in range(T):
            r = resid[i, t]
            top = log_off[i, t] - r * r * inv2tau2
            buf[0] = top
            for j in range(J):
                d = r - atoms[j]
                v = log_on[i, t] + log_w[j] - d * d * inv2tau2
                buf[j + 1] = v
                if v > top:
                    top = v
            total = 0.0
            for j in range(J + 1):
                buf[j] = math.exp(buf[j] - top)
                total += buf[j]
            target = u[i, t] * total
            acc = 0.0
            k = 0
            for j in range(J + 1):
                acc += buf[j]
                if acc > target:
                    k = j
                    break
                k = j
            out[i, t] = k


def sample_spike_allocations_block(resid, stilde, amp_atoms, weights, tau2, u, out,
                                   log_on=None, log_off=None):
    """Allocation draws for a block of neurons using supplied uniforms ``u``.

    ``log_on``/``log_off`` may carry precomputed ``log Phi(+-stilde)``.
    """
    with np.errstate(divide="ignore"):
        log_w = np.log(np.asarray(weights, dtype=float))
    if log_on is None:
        if not np.all(np.isfinite(stilde)):
            raise FloatingPointError("non-finite activation path")
        log_on, log_off = log_ndtr(stilde), log_ndtr(-stilde)
    if not np.isfinite(np.max(log_w)):
        raise FloatingPointError("allocation weights are all zero or non-finite")
    _allocate_rows(np.ascontiguousarray(resid), np.ascontiguousarray(log_on),
                   np.ascontiguousarray(log_off),
                   np.asarray(amp_atoms, dtype=float), log_w, 1.0 / (2.0 * tau2),
                   np.ascontiguousarray(u), out)


def sample_spike_allocations(c, gamma, tau2, stilde, amp_atoms, dp_sticks, rng):
    """Draw ``xi`` for every (i, t) from its categorical full conditional.

    ``stilde`` holds, for each neuron, the latent activation path of the
    cluster it belongs to (``n x T``).  Returns ``(xi, s, a)``.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    resid = c[:, 1:] - gamma * c[:, :-1]
    stilde = np.broadcast_to(np.asarray(stilde, dtype=float), resid.shape)
    xi = np.empty(resid.shape, dtype=np.int64)
    u = rng.random(resid.shape)
    sample_spike_allocations_block(resid, stilde, amp_atoms, dp_weights(dp_sticks), tau2, u, xi)
    s, a = spikes_and_amplitudes(xi, amp_atoms)
    return xi, s, a


def atom_sufficient_stats(xi, resid, J):
    """Per-atom counts, residual sums and residual sums of squares (atoms 1..J)."""
    flat = np.asarray(xi).ravel()
    r = np.asarray(resid, dtype=float).ravel()
    counts = np.bincount(flat, minlength=J + 1)[1:]
    s1 = np.bincount(flat, weights=r, minlength=J + 1)[1:]
    s2 = np.bincount(flat, weights=r * r, minlength=J + 1)[1:]
    return counts, s1, s2


def log_atom_target(a, counts, s1, s2, tau2, alpha_a, beta_a, a_bar):
    """Unnormalized log full conditional of each amplitude atom."""
    a = np.asarray(a, dtype=float)
    excess = a - a_bar
    with np.errstate(divide="ignore", invalid="ignore"):
        prior = np.where(excess > 0, (alpha_a - 1.0) * np.log(excess) - beta_a * excess, -np.inf)
    return prior - (s2 - 2.0 * a * s1 + counts * a * a) / (2.0 * tau2)


def sample_amplitude_atoms(xi, c, gamma, tau2, alpha_a, beta_a, a_bar, step, amp_atoms, rng):
    """One Metropolis step per occupied atom on ``log(a - a_bar)``; empty atoms
    are redrawn from the shifted-Gamma base measure.

    The proposal scale of atom ``j`` is ``step / sqrt(n_j)``; it depends only on
    the allocation, which is held fixed during this update.
    Returns ``(atoms, accepted)`` where ``accepted`` flags occupied atoms that moved.
    """
    amp_atoms = np.asarray(amp_atoms, dtype=float)
    J = amp_atoms.shape[0]
    c = np.atleast_2d(c)
    resid = c[:, 1:] - gamma * c[:, :-1]
    counts, s1, s2 = atom_sufficient_stats(xi, resid, J)
    noise = rng.standard_normal(J)
    u = rng.random(J)
    fresh = a_bar + rng.gamma(alpha_a, 1.0 / beta_a, size=J)
    return _atom_update(amp_atoms, counts, s1, s2, tau2, alpha_a, beta_a, a_bar, step,
                        noise, u, fresh)


def _atom_update(amp_atoms, counts, s1, s2, tau2, alpha_a, beta_a, a_bar, step, noise, u, fresh):
    log_excess = np.log(amp_atoms - a_bar)
    prop_log_excess = log_excess + step / np.sqrt(np.maximum(counts, 1)) * noise
    prop = a_bar + np.exp(prop_log_excess)
    log_ratio = (log_atom_target(prop, counts, s1, s2, tau2, alpha_a, beta_a, a_bar)
                 - log_atom_target(amp_atoms, counts, s1, s2, tau2, alpha_a, beta_a, a_bar)
                 + prop_log_excess - log_excess)
    accept = (np.log(np.maximum(u, 1e-300)) < log_ratio) & (prop > a_bar)
    occupied = counts > 0
    new = np.where(occupied, np.where(accept, prop, amp_atoms), fresh)
    return new, accept & occupied


def stick_parameters(xi, J, alpha_dp):
    """Beta parameters ``(1 + n_j, alpha + sum_{r>j} n_r)`` for j = 1..J."""
    counts = np.bincount(np.asarray(xi).ravel(), minlength=J + 1)[1:J + 1]
    tail = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0]))
    return 1.0 + counts, alpha_dp + tail


def sample_dp_sticks(xi, J, alpha_dp, rng):
    """Conjugate stick update; the last stick is fixed to one."""
    a, b = stick_parameters(xi, J, alpha_dp)
    v = rng.beta(a, b)
    v[-1] = 1.0
    return v
