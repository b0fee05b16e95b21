"""Spike-detection error rates and the adjusted Rand index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpikeErrors:
    false_negative: float
    false_positive: float
    misclassification: float

    def __iter__(self):
        return iter((self.false_negative, self.false_positive, self.misclassification))


def spike_error_rates(s_true, s_est) -> SpikeErrors:
    """Frame-exact FN rate (misses/positives), FP rate (false alarms/negatives)
    and overall misclassification (errors/cells).  Empty classes give rate 0."""
    s_true = np.asarray(s_true) > 0
    s_est = np.asarray(s_est) > 0
    if s_true.shape != s_est.shape:
        raise ValueError("spike matrices must have equal shapes")
    pos = s_true.sum()
    neg = s_true.size - pos
    misses = np.sum(s_true & ~s_est)
    alarms = np.sum(~s_true & s_est)
    fn = misses / pos if pos else 0.0
    fp = alarms / neg if neg else 0.0
    return SpikeErrors(float(fn), float(fp), float((misses + alarms) / s_true.size))


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError("partitions must label the same number of items")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    expected = rows * cols / _comb2(n)
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))
