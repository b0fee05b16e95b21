"""Random-variate helpers shared by the Gibbs steps.

All samplers take their uniforms explicitly (or a Generator) so that the draws
of a step can be generated up front in a fixed layout and then consumed by any
number of worker threads without changing the result.
"""

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

_TINY = np.finfo(float).tiny


def truncnorm_positive(mean, u):
    """Draw N(mean, 1) truncated to (0, inf) by inversion.

    Works in log space: with ``a = -mean`` the draw is
    ``mean + Phi^-1_upper(v * P(Z > a))``, evaluated as ``-ndtri_exp`` so that
    truncation points far in either tail stay finite.
    """
    mean = np.asarray(mean, dtype=float)
    u = np.clip(np.asarray(u, dtype=float), _TINY, 1.0)
    x = mean - ndtri_exp(np.log(u) + log_ndtr(mean))
    return np.maximum(x, 0.0)


def truncnorm_negative(mean, u):
    """Draw N(mean, 1) truncated to (-inf, 0)."""
    return -truncnorm_positive(-np.asarray(mean, dtype=float), u)


def truncnorm_signed(mean, positive, u):
    """Positive truncation where ``positive`` is True, negative elsewhere."""
    mean = np.asarray(mean, dtype=float)
    signed = np.where(positive, mean, -mean)
    draw = truncnorm_positive(signed, u)
    return np.where(positive, draw, -draw)


def categorical_from_logits(logits, u):
    """Sample indices along the last axis of ``logits`` by inverse CDF.

    ``u`` has the shape of ``logits`` without its last axis.  Raises
    ``FloatingPointError`` when a row has no finite weight.
    """
    logits = np.asarray(logits, dtype=float)
    top = logits.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise FloatingPointError("categorical weights are all zero or non-finite")
    w = np.exp(logits - top)
    cdf = np.cumsum(w, axis=-1)
    target = np.asarray(u)[..., None] * cdf[..., -1:]
    idx = (cdf <= target).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)


def normalized_probs(logits):
    logits = np.asarray(logits, dtype=float)
    w = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def step_streams(seed, kinds):
    """One independent Generator per step kind, keyed by name order."""
    children = np.random.SeedSequence(seed).spawn(len(kinds))
    return {kind: np.random.default_rng(ss) for kind, ss in zip(kinds, children)}
