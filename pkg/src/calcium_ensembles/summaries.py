"""Posterior summaries computed from stored chains.

Partitions arrive as ``draws x n`` integer matrices of raw cluster labels.
Returned partitions are canonicalized: labels ``1..K`` in order of first
appearance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


def canonical_labels(labels):
    """Relabel to ``1..K`` by order of first occurrence."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse.ravel()] + 1


def _as_draws(partitions):
    P = np.atleast_2d(np.asarray(partitions))
    if P.shape[0] < 1 or P.shape[1] < 1:
        raise ValueError("need at least one draw of at least one item")
    return np.vstack([canonical_labels(row) - 1 for row in P])


@dataclass(frozen=True)
class SimilarityMatrix:
    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("similarity matrix must be square")


def similarity_matrix(partitions) -> SimilarityMatrix:
    """Fraction of draws in which each pair of items shares a cluster."""
    P = _as_draws(partitions)
    D, n = P.shape
    counts = np.zeros((n, n))
    for k in range(P.max() + 1):
        member = (P == k).astype(float)
        counts += member.T @ member
    return SimilarityMatrix(counts / D)


# ---------------------------------------------------------------------------
# VI point estimate
# ---------------------------------------------------------------------------

def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.maximum(x, 1)), 0.0)


def expected_vi(labels, partitions):
    """Posterior expected variation of information (natural log) of ``labels``."""
    P = _as_draws(partitions)
    c = canonical_labels(labels) - 1
    if c.shape[0] != P.shape[1]:
        raise ValueError("labels and draws must cover the same items")
    return _expected_vi_raw(c, P, _draw_entropy_term(P))


def _draw_entropy_term(P):
    D = P.shape[0]
    B = P.max() + 1
    sizes = np.bincount((np.arange(D)[:, None] * B + P).ravel(), minlength=D * B)
    return _xlogx(sizes).sum() / D


def _expected_vi_raw(c, P, other):
    """``c`` holds labels ``0..A-1``; ``P`` draws with labels ``0..B-1``."""
    D, n = P.shape
    c = np.asarray(c)
    A, B = c.max() + 1, P.max() + 1
    idx = (np.arange(D)[:, None] * A + c[None, :]) * B + P
    joint = np.bincount(idx.ravel(), minlength=D * A * B)
    own = _xlogx(np.bincount(c)).sum()
    cross = _xlogx(joint).sum() / D
    return float((own + other - 2.0 * cross) / n)


class _VISearch:
    """Greedy label moves on the expected VI with contingency tables kept per draw."""

    def __init__(self, draws, max_clusters):
        self.P = draws
        self.D, self.n = draws.shape
        self.B = draws.max() + 1
        self.A = max_clusters
        self.f = _xlogx(np.arange(self.n + 2))
        self.df = np.diff(self.f)  # f(x + 1) - f(x)
        self.rows = np.arange(self.D)
        self.other = _draw_entropy_term(draws)

    def _delta(self, i, sizes, N):
        """Loss change of adding item ``i`` to each cluster (unnormalized by n)."""
        col = self.P[:, i]
        cross = self.df[N[self.rows, :, col]].sum(axis=0)
        return self.df[sizes] - (2.0 / self.D) * cross

    def _add(self, i, a, sizes, N):
        sizes[a] += 1
        N[self.rows, a, self.P[:, i]] += 1

    def _remove(self, i, a, sizes, N):
        sizes[a] -= 1
        N[self.rows, a, self.P[:, i]] -= 1

    def _choose(self, delta, sizes):
        open_ = sizes > 0
        cand = np.where(open_, delta, np.inf)
        empty = np.flatnonzero(~open_)
        if empty.size:
            cand[empty[0]] = delta[empty[0]]
        return int(np.argmin(cand))

    def _tables(self, labels):
        sizes = np.bincount(labels, minlength=self.A).astype(np.int64)
        N = np.zeros((self.D, self.A, self.B), dtype=np.int64)
        np.add.at(N, (np.repeat(self.rows, self.n), np.tile(labels, self.D), self.P.ravel()), 1)
        return sizes, N

    def sequential(self, order):
        labels = np.full(self.n, -1)
        sizes = np.zeros(self.A, dtype=np.int64)
        N = np.zeros((self.D, self.A, self.B), dtype=np.int64)
        for i in order:
            a = self._choose(self._delta(i, sizes, N), sizes)
            labels[i] = a
            self._add(i, a, sizes, N)
        return labels

    def refine(self, labels, order_rng, max_sweeps=100):
        labels = labels.copy()
        sizes, N = self._tables(labels)
        for _ in range(max_sweeps):
            changed = False
            for i in order_rng.permutation(self.n):
                old = labels[i]
                self._remove(i, old, sizes, N)
                delta = self._delta(i, sizes, N)
                a = self._choose(delta, sizes)
                if delta[a] < delta[old] - 1e-12:
                    changed = True
                else:
                    a = old
                labels[i] = a
                self._add(i, a, sizes, N)
            if not changed and not self._merge(labels):
                break
            if not changed:
                sizes, N = self._tables(labels)
        return labels

    def _merge(self, labels):
        """Apply the best loss-reducing merge of two clusters, if any."""
        best, pair = None, None
        current = self.loss(labels)
        occupied = np.unique(labels)
        for x in range(len(occupied)):
            for y in range(x + 1, len(occupied)):
                trial = np.where(labels == occupied[y], occupied[x], labels)
                value = self.loss(trial)
                if value < current - 1e-12 and (best is None or value < best):
                    best, pair = value, (occupied[x], occupied[y])
        if pair is None:
            return False
        labels[labels == pair[1]] = pair[0]
        return True

    def loss(self, labels):
        return _expected_vi_raw(labels, self.P, self.other)


def vi_point_estimate(partitions, max_clusters=None, restarts=16, rng=None):
    """Partition minimizing the posterior expected variation of information.

    Candidates: the best posterior draw, refined greedily, and ``restarts``
    random-order sequential allocations, each refined by one-at-a-time label
    moves and pairwise merges.  Returns canonical labels ``1..K``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    P = _as_draws(partitions)
    D, n = P.shape
    rng = np.random.default_rng(rng)
    if max_clusters is None:
        max_clusters = min(n, int(P.max()) + 6)
    max_clusters = int(min(max_clusters, n))
    if max_clusters < 1:
        raise ValueError("max_clusters must be >= 1")
    search = _VISearch(P, max_clusters)

    uniq = np.unique(P, axis=0)
    uniq = uniq[uniq.max(axis=1) < max_clusters]
    best_labels, best_loss = None, np.inf
    for cand in uniq:
        value = search.loss(cand)
        if value < best_loss - 1e-15:
            best_labels, best_loss = cand, value
    starts = [] if best_labels is None else [best_labels]
    starts += [search.sequential(rng.permutation(n)) for _ in range(restarts)]
    for start in starts:
        labels = search.refine(start, rng)
        value = search.loss(labels)
        if value < best_loss - 1e-15:
            best_labels, best_loss = labels, value
    return canonical_labels(best_labels)


# ---------------------------------------------------------------------------
# cluster counts and cross-window agreement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterCountSummary:
    mode: int
    variance: float
    counts: np.ndarray
    histogram: dict


def num_clusters_summary(partitions) -> ClusterCountSummary:
    """Mode (smallest on ties) and population variance of occupied-cluster counts."""
    P = np.atleast_2d(np.asarray(partitions))
    if P.shape[0] < 1:
        raise ValueError("need at least one draw")
    counts = np.array([len(np.unique(row)) for row in P])
    values, freq = np.unique(counts, return_counts=True)
    mode = int(values[np.argmax(freq)])
    return ClusterCountSummary(mode, float(np.var(counts)), counts,
                               {int(v): int(f) for v, f in zip(values, freq)})


def cross_window_coclustering(window_partitions):
    """Fraction of windows in which each pair of neurons shares a label.

    Returns ``(matrix, fraction_of_pairs_above_half)``.
    """
    parts = [np.asarray(p) for p in window_partitions]
    if not parts:
        raise ValueError("need at least one window partition")
    n = len(parts[0])
    if any(len(p) != n for p in parts):
        raise ValueError("all window partitions must cover the same neurons")
    stacked = np.vstack(parts)
    probs = similarity_matrix(stacked).probs
    iu = np.triu_indices(n, 1)
    frac = float(np.mean(probs[iu] > 0.5)) if n > 1 else 0.0
    return probs, frac


# ---------------------------------------------------------------------------
# spatial maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def shape(self):
        return len(self.x_edges) - 1, len(self.y_edges) - 1

    @property
    def centers(self):
        xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        return xc, yc

    def cell_of(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        gx, gy = self.shape
        ix = np.clip(np.searchsorted(self.x_edges, points[:, 0], side="right") - 1, 0, gx - 1)
        iy = np.clip(np.searchsorted(self.y_edges, points[:, 1], side="right") - 1, 0, gy - 1)
        return ix, iy


def make_grid(bounds, resolution=50):
    """Regular grid over ``((xmin, xmax), (ymin, ymax))``."""
    (x0, x1), (y0, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        x1, y1 = max(x1, x0 + 1e-9), max(y1, y0 + 1e-9)
    return Grid(np.linspace(x0, x1, resolution + 1), np.linspace(y0, y1, resolution + 1))


def arena_bounds(center, radius):
    return ((center[0] - radius, center[0] + radius), (center[1] - radius, center[1] + radius))


def _window_frames(windows, spike_probs):
    frames, probs = [], []
    for w, p in zip(windows, spike_probs):
        p = np.asarray(p, dtype=float)
        if p.shape[1] != len(w):
            raise ValueError("spike probabilities must match their window length")
        frames.append(np.arange(w.start, w.end))
        probs.append(p)
    return np.concatenate(frames), np.hstack(probs)


def spatial_firing_map(windows, spike_probs, track, grid: Grid):
    """Mean posterior spike probability per neuron and visited grid cell.

    ``spike_probs[w]`` is the ``n x len(window)`` spike-probability matrix of
    window ``w``.  Returns an ``n x gx x gy`` array with NaN at unvisited cells.
    """
    frames, probs = _window_frames(windows, spike_probs)
    track = np.asarray(track, dtype=float).reshape(-1, 2)
    if frames.max() >= len(track):
        raise ValueError("windows extend beyond the track")
    ix, iy = grid.cell_of(track[frames])
    gx, gy = grid.shape
    flat = ix * gy + iy
    visits = np.bincount(flat, minlength=gx * gy).astype(float)
    sums = np.vstack([np.bincount(flat, weights=row, minlength=gx * gy) for row in probs])
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(visits > 0, sums / visits, np.nan)
    return means.reshape(len(probs), gx, gy)


def kernel_smooth(points, values, queries, bandwidth):
    """Gaussian-kernel weighted average of ``values`` at ``queries``.

    Weights are normalized in log space, so a vanishing bandwidth degrades to
    the value of the nearest point (equidistant points are averaged).
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    queries = np.asarray(queries, dtype=float).reshape(-1, 2)
    values = np.asarray(values, dtype=float)
    d2 = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    logw = -d2 / (2.0 * bandwidth ** 2)
    logw -= logsumexp(logw, axis=1, keepdims=True)
    return np.exp(logw) @ values


@dataclass(frozen=True)
class ComplexityMaps:
    mode_grid: np.ndarray
    variance_grid: np.ndarray
    support: np.ndarray
    points: np.ndarray
    point_mode: np.ndarray
    point_variance: np.ndarray


def spatial_complexity_map(window_stats, track, windows, bandwidth, grid: Grid):
    """Smooth per-window cluster-count mode and variance over the arena.

    Every trajectory point inside a window carries that window's (mode,
    variance).  ``support`` marks cells within three bandwidths of a point.
    """
    track = np.asarray(track, dtype=float).reshape(-1, 2)
    frames, modes, variances = [], [], []
    for (mode, var), w in zip(window_stats, windows):
        idx = np.arange(w.start, w.end)
        frames.append(idx)
        modes.append(np.full(len(idx), float(mode)))
        variances.append(np.full(len(idx), float(var)))
    frames = np.concatenate(frames)
    pts = track[frames]
    point_mode, point_var = np.concatenate(modes), np.concatenate(variances)
    xc, yc = grid.centers
    qx, qy = np.meshgrid(xc, yc, indexing="ij")
    queries = np.column_stack([qx.ravel(), qy.ravel()])
    smooth = kernel_smooth(pts, np.column_stack([point_mode, point_var]), queries, bandwidth)
    d2 = ((queries[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1).min(axis=1)
    shape = grid.shape
    return ComplexityMaps(smooth[:, 0].reshape(shape), smooth[:, 1].reshape(shape),
                          (d2 <= (3.0 * bandwidth) ** 2).reshape(shape),
                          pts, point_mode, point_var)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def effective_sample_size(x):
    """ESS from autocorrelations summed over Geyer's initial positive pairs."""
    x = np.asarray(x, dtype=float)
    m = len(x)
    if m < 4 or np.var(x) == 0:
        return float(m)
    xc = x - x.mean()
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:m]
    acf /= acf[0]
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(m / max(tau, 1e-12))


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------

def write_matrix_csv(matrix, path, ids=None):
    matrix = np.asarray(matrix)
    ids = ids if ids is not None else [str(i) for i in range(matrix.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + list(ids))
        for i, row in zip(ids, matrix):
            w.writerow([i] + [f"{v:.10g}" for v in row])


def write_partition_csv(labels, path, ids=None):
    ids = ids if ids is not None else [str(i) for i in range(len(labels))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cluster"])
        for i, lab in zip(ids, labels):
            w.writerow([i, int(lab)])


def read_partition_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["id"] for r in rows], np.array([int(r["cluster"]) for r in rows])


def write_histogram_csv(summaries, path, labels=None):
    """One row per (window, count) with the frequency and the window's mode/variance."""
    labels = labels if labels is not None else [str(i) for i in range(len(summaries))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "n_clusters", "frequency", "mode", "variance_population"])
        for lab, s in zip(labels, summaries):
            total = sum(s.histogram.values())
            for k, f in sorted(s.histogram.items()):
                w.writerow([lab, k, f"{f / total:.10g}", s.mode, f"{s.variance:.10g}"])


def write_firing_maps_csv(maps, path, ids=None):
    n = maps.shape[0]
    ids = ids if ids is not None else [str(i) for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["neuron", "cell_x", "cell_y", "value"])
        for i in range(n):
            for cx, cy in zip(*np.nonzero(~np.isnan(maps[i]))):
                w.writerow([ids[i], cx, cy, f"{maps[i, cx, cy]:.10g}"])


def write_complexity_csv(maps: ComplexityMaps, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_x", "cell_y", "mode_smoothed", "variance_smoothed", "supported"])
        gx, gy = maps.mode_grid.shape
        for cx in range(gx):
            for cy in range(gy):
                w.writerow([cx, cy, f"{maps.mode_grid[cx, cy]:.10g}",
                            f"{maps.variance_grid[cx, cy]:.10g}", int(maps.support[cx, cy])])


def write_complexity_points_csv(maps: ComplexityMaps, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "mode", "variance"])
        for (x, y), m, v in zip(maps.points, maps.point_mode, maps.point_variance):
            w.writerow([f"{x:.10g}", f"{y:.10g}", f"{m:.10g}", f"{v:.10g}"])


def pairs_above(matrix, threshold=0.5):
    n = matrix.shape[0]
    iu = np.triu_indices(n, 1)
    return int(np.sum(matrix[iu] > threshold)), math.comb(n, 2)
