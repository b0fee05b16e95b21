"""Two-stage comparison pipeline: l0 spike deconvolution, then consensus k-means.

The deconvolution fits ``y_t ~ c_t`` with ``c_t = gamma c_{t-1} + a_t`` where
``a_t >= 0`` may be nonzero only at spike frames, each of which costs ``lam``.
The exact optimum is found by dynamic programming over the optimal cost as a
piecewise-quadratic function of the current calcium level.  An unconstrained
variant (free jumps of either sign at changepoints, solved over segment
boundaries) is available with ``positive=False``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import silhouette_score
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from ._validation import check_traces

_TIE = 1e-10


def estimate_noise_sd(trace):
    """MAD of first differences, scaled to a Gaussian standard deviation."""
    y = np.asarray(trace, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two frames")
    d = np.diff(y)
    return float(1.4826 * np.median(np.abs(d - np.median(d))) / math.sqrt(2.0))


def _segment_costs_ending(y, t, gamma, syg, g2, pw, syy):
    """Update running sums to include frame ``t`` and return costs of [s, t+1)."""
    syg[: t + 1] += y[t] * pw[: t + 1]
    g2[: t + 1] += pw[: t + 1] ** 2
    pw[: t + 1] *= gamma
    cost = (syy[t + 1] - syy[: t + 1]) - syg[: t + 1] ** 2 / g2[: t + 1]
    return np.maximum(cost, 0.0)


@dataclass
class L0Fit:
    changepoints: np.ndarray
    spikes: np.ndarray
    amplitudes: np.ndarray
    calcium: np.ndarray
    objective: float


def segment_fit(y, gamma, starts):
    """Least-squares calcium for a fixed set of segment starts (``0`` implied)."""
    y = np.asarray(y, dtype=float)
    T = y.size
    bounds = sorted(set([0] + [int(s) for s in starts])) + [T]
    c = np.empty(T)
    for s, e in zip(bounds[:-1], bounds[1:]):
        g = gamma ** np.arange(e - s)
        c[s:e] = (y[s:e] @ g) / (g @ g) * g
    return c


def l0_objective(y, c, lam, n_changepoints):
    y = np.asarray(y, dtype=float)
    return float(np.sum((y - c) ** 2) + lam * n_changepoints)


def _check_l0_args(gamma, lam):
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if lam < 0:
        raise ValueError("lam must be >= 0")


def l0_deconvolve(trace, gamma, lam, positive=True) -> L0Fit:
    """Exact minimizer of ``sum (y - c)^2 + lam * #spikes``.

    With ``positive=True`` the calcium follows ``c_t = gamma c_{t-1} + a_t``
    with ``a_t >= 0`` at spike frames and ``a_t = 0`` elsewhere; ``c_0`` is
    free.  With ``positive=False`` the level restarts freely at changepoints
    and changepoints with a positive jump are reported as spikes.  Among equal
    objectives the solution with fewer spikes (changepoints) wins.
    """
    _check_l0_args(gamma, lam)
    y = np.asarray(trace, dtype=float)
    if y.ndim != 1 or y.size < 1:
        raise ValueError("trace must be a non-empty 1-d array")
    if positive:
        return _positive_l0(y, float(gamma), float(lam))
    return _segment_l0(y, gamma, lam)


def _segment_l0(y, gamma, lam):
    T = y.size
    syy = np.concatenate(([0.0], np.cumsum(y * y)))
    syg = np.zeros(T)
    g2 = np.zeros(T)
    pw = np.ones(T)
    F = np.empty(T + 1)
    nseg = np.zeros(T + 1, dtype=np.int64)
    back = np.zeros(T + 1, dtype=np.int64)
    F[0] = -lam
    for t in range(T):
        cost = _segment_costs_ending(y, t, gamma, syg, g2, pw, syy)
        cand = F[: t + 1] + lam + cost
        best = cand.min()
        tol = _TIE * (1.0 + abs(best))
        near = np.flatnonzero(cand <= best + tol)
        s = near[np.argmin(nseg[near])]
        F[t + 1] = cand[s]
        back[t + 1] = s
        nseg[t + 1] = nseg[s] + 1
    starts = []
    t = T
    while t > 0:
        s = back[t]
        starts.append(s)
        t = s
    starts = np.array(sorted(starts)[1:], dtype=np.int64)
    c = segment_fit(y, gamma, starts)
    jumps = np.array([c[s] - gamma * c[s - 1] for s in starts])
    spikes = starts[jumps > 0] if starts.size else starts
    amplitudes = jumps[jumps > 0] if starts.size else np.zeros(0)
    return L0Fit(starts, spikes, amplitudes, c, float(F[T]))


# Piecewise-quadratic cost functions are lists of (lo, hi, (a, b, k), prev)
# covering the real line in order; the piece is a u^2 + b u + k on [lo, hi).
# ``prev`` is None when the level at t was reached by pure decay from t-1, and
# otherwise the level at t-1 from which a spike jumped up.

def _qval(q, u):
    return (q[0] * u + q[1]) * u + q[2]


def _quad_roots(a, b, k):
    """Sorted real roots of ``a u^2 + b u + k``, computed on rescaled coefficients."""
    scale = max(abs(a), abs(b), abs(k))
    if scale == 0.0:
        return []
    a, b, k = a / scale, b / scale, k / scale
    if a == 0.0:
        return [] if b == 0.0 else [-k / b]
    disc = b * b - 4.0 * a * k
    if disc < 0.0:
        return []
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    if q == 0.0:
        return [0.0]
    return sorted((q / a, k / q))


def _running_min(pieces):
    """``H(u) = min_{v <= u} F(v)`` as pieces tagged ``("q", quad)`` or ``("c", (value, argmin))``."""
    out = []
    best, where = math.inf, None
    for lo, hi, q, _ in pieces:
        vertex = -q[1] / (2.0 * q[0])
        fall_end = min(max(vertex, lo), hi)
        if fall_end > lo:
            start = lo if best == math.inf else None
            if start is None:
                r = _quad_roots(q[0], q[1], q[2] - best)
                if r and r[-1] > lo and r[0] < fall_end:
                    start = max(r[0], lo)
            if start is None:
                out.append((lo, fall_end, "c", (best, where)))
            else:
                if start > lo:
                    out.append((lo, start, "c", (best, where)))
                out.append((start, fall_end, "q", q))
                best, where = _qval(q, fall_end), fall_end
        if fall_end < hi:
            if lo <= vertex and _qval(q, vertex) < best:
                best, where = _qval(q, vertex), vertex
            out.append((fall_end, hi, "c", (best, where)))
    return out


def _probe(lo, hi):
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return hi - 1.0 - abs(hi)
    if math.isinf(hi):
        return lo + 1.0 + abs(lo)
    return 0.5 * (lo + hi)


def _positive_l0(y, gamma, lam):
    T = y.size
    ys = [float(v) for v in y]
    F = [(-math.inf, math.inf, (1.0, -2.0 * ys[0], ys[0] ** 2), None)]
    history = [F]
    g2 = gamma * gamma
    for t in range(1, T):
        H = _running_min(F)
        cuts = sorted({p[0] for p in F} | {p[1] for p in F} | {h[0] for h in H} | {h[1] for h in H})
        merged = []
        fi = hi_ = 0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            while F[fi][1] <= lo:
                fi += 1
            while H[hi_][1] <= lo:
                hi_ += 1
            g = F[fi][2]
            kind, data = H[hi_][2], H[hi_][3]
            if kind == "q":
                # zero-size jump: never better than decay, which ties it minus lam
                merged.append((lo, hi, g, None))
                continue
            h = (0.0, 0.0, data[0] + lam)
            d = (g[0], g[1], g[2] - h[2])
            pts = [lo] + [r for r in _quad_roots(*d) if lo < r < hi] + [hi]
            for a, b in zip(pts[:-1], pts[1:]):
                if _qval(d, _probe(a, b)) <= 0.0:
                    merged.append((a, b, g, None))
                else:
                    merged.append((a, b, h, data[1]))
        # map u = c_{t-1} to c_t = gamma u and add the frame's squared error
        F = []
        for lo, hi, q, prev in merged:
            q2 = (q[0] / g2 + 1.0, q[1] / gamma - 2.0 * ys[t], q[2] + ys[t] ** 2)
            piece = (lo * gamma, hi * gamma, q2, prev)
            if F and F[-1][2] == q2 and F[-1][3] == prev:
                F[-1] = (F[-1][0], piece[1], q2, prev)
            else:
                F.append(piece)
        history.append(F)
    best, level = math.inf, 0.0
    for lo, hi, q, _ in F:
        u = min(max(-q[1] / (2.0 * q[0]), lo), hi)
        if math.isinf(u):
            continue
        v = _qval(q, u)
        if v < best:
            best, level = v, u
    c = np.empty(T)
    c[-1] = level
    spikes = []
    for t in range(T - 1, 0, -1):
        pieces = history[t]
        j = np.searchsorted([p[0] for p in pieces], c[t], side="right") - 1
        prev = pieces[max(j, 0)][3]
        if prev is None:
            c[t - 1] = c[t] / gamma
        else:
            c[t - 1] = prev
            # a jump of size zero (a tie at lam = 0) is plain decay
            if c[t] - gamma * prev > _TIE * (1.0 + abs(c[t])):
                spikes.append(t)
    spikes = np.array(spikes[::-1], dtype=np.int64)
    amplitudes = c[spikes] - gamma * c[spikes - 1] if spikes.size else np.zeros(0)
    return L0Fit(spikes, spikes, amplitudes, c, l0_objective(y, c, lam, spikes.size))


def exhaustive_l0(trace, gamma, lam, positive=True):
    """Brute-force minimum over every spike (changepoint) set, for small ``T`` only.

    Each candidate is fitted independently of the dynamic programs: by
    nonnegative least squares on the spike design matrix when ``positive``,
    else by ordinary least squares on the segment design matrix.
    Returns ``(objective, frames)``.
    """
    _check_l0_args(gamma, lam)
    y = np.asarray(trace, dtype=float)
    T = y.size
    if T > 16:
        raise ValueError("exhaustive search is limited to T <= 16")
    decay = gamma ** np.arange(T)
    best = (np.inf, None)
    for mask in range(1 << (T - 1)):
        frames = [t for t in range(1, T) if mask >> (t - 1) & 1]
        if positive:
            # the free initial level enters as a difference of two nonnegative columns
            X = np.zeros((T, 2 + len(frames)))
            X[:, 0], X[:, 1] = decay, -decay
            for j, s in enumerate(frames):
                X[s:, 2 + j] = decay[: T - s]
            rss = nnls(X, y, maxiter=50 * X.shape[1])[1] ** 2
        else:
            bounds = [0] + frames + [T]
            X = np.zeros((T, len(bounds) - 1))
            for j, (s, e) in enumerate(zip(bounds[:-1], bounds[1:])):
                X[s:e, j] = decay[: e - s]
            coef = np.linalg.lstsq(X, y, rcond=None)[0]
            rss = float(np.sum((y - X @ coef) ** 2))
        value = float(rss + lam * len(frames))
        if value < best[0]:
            best = (value, frames)
    return best


def lambda_grid(noise_var, n_grid=30, low=0.01, high=100.0):
    return np.geomspace(low, high, n_grid) * noise_var


def select_lambda(trace, gamma, n_grid=30, positive=True):
    """Smallest grid penalty whose detected amplitudes all reach one noise sd.

    Returns ``(lam, fit, fallback)``; ``fallback`` is True when no grid value
    qualifies and the largest one is returned.
    """
    y = np.asarray(trace, dtype=float)
    sd = estimate_noise_sd(y)
    grid = lambda_grid(sd * sd, n_grid)
    fit = None
    for lam in grid:
        fit = l0_deconvolve(y, gamma, lam, positive)
        if np.all(fit.amplitudes >= sd):
            return float(lam), fit, False
    warnings.warn("no penalty on the grid keeps every amplitude above the noise level",
                  RuntimeWarning, stacklevel=2)
    return float(grid[-1]), fit, True


def estimate_gamma(trace, starts, grid=None):
    """Decay maximizing the fit of segment-wise AR(1) decays with fixed changepoints."""
    y = np.asarray(trace, dtype=float)
    grid = np.linspace(0.5, 0.99, 50) if grid is None else np.asarray(grid)
    sse = [np.sum((y - segment_fit(y, g, starts)) ** 2) for g in grid]
    return float(grid[int(np.argmin(sse))])


class L0SpikeDeconvolver(TransformerMixin, BaseEstimator):
    """Per-trace l0 deconvolution with data-driven decay and penalty.

    ``gamma=None`` estimates the decay per trace from an initial pass at
    ``gamma_init``; ``lam=None`` selects the penalty per trace.
    ``positive=False`` switches to the unconstrained changepoint fit.
    ``transform`` returns the binary spike matrix.
    """

    def __init__(self, gamma=None, lam=None, gamma_init=0.9, n_lambda=30, positive=True):
        self.gamma = gamma
        self.lam = lam
        self.gamma_init = gamma_init
        self.n_lambda = n_lambda
        self.positive = positive

    def _fit_trace(self, y):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if self.gamma is None:
                if self.lam is None:
                    _, first, _ = select_lambda(y, self.gamma_init, self.n_lambda, self.positive)
                else:
                    first = l0_deconvolve(y, self.gamma_init, self.lam, self.positive)
                gamma = estimate_gamma(y, first.changepoints)
            else:
                gamma = float(self.gamma)
            if self.lam is None:
                lam, fit, fallback = select_lambda(y, gamma, self.n_lambda, self.positive)
            else:
                lam, fit = float(self.lam), l0_deconvolve(y, gamma, self.lam, self.positive)
                fallback = False
        return gamma, lam, fit, fallback

    def fit(self, X, y=None):
        X = check_traces(X)
        results = [self._fit_trace(row) for row in X]
        self.gammas_ = np.array([r[0] for r in results])
        self.lambdas_ = np.array([r[1] for r in results])
        self.fallback_ = np.array([r[3] for r in results])
        self.fits_ = [r[2] for r in results]
        T = X.shape[1]
        self.spikes_ = np.zeros(X.shape, dtype=np.int8)
        self.amplitudes_ = np.zeros(X.shape)
        self.calcium_ = np.vstack([f.calcium for f in self.fits_]) if len(X) else np.zeros((0, T))
        for i, f in enumerate(self.fits_):
            self.spikes_[i, f.spikes] = 1
            self.amplitudes_[i, f.spikes] = f.amplitudes
        self.n_features_in_ = T
        self._fitted_data = X
        return self

    def transform(self, X):
        check_is_fitted(self, "spikes_")
        X = check_traces(X)
        if X.shape == self._fitted_data.shape and np.array_equal(X, self._fitted_data):
            return self.spikes_.copy()
        out = np.zeros(X.shape, dtype=np.int8)
        for i, row in enumerate(X):
            gamma = self.gammas_[i] if i < len(self.gammas_) else self.gamma_init
            lam = self.lambdas_[i] if i < len(self.lambdas_) else \
                select_lambda(row, gamma, self.n_lambda, self.positive)[0]
            out[i, l0_deconvolve(row, gamma, lam, self.positive).spikes] = 1
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X).spikes_.copy()


def consensus_matrix(X, k, subsample_frac=0.5, replications=200, rng=None):
    """Co-assignment frequency of item pairs over subsampled k-means runs."""
    rng = np.random.default_rng(rng)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    m = max(1, int(round(subsample_frac * n)))
    together = np.zeros((n, n))
    sampled = np.zeros((n, n))
    for _ in range(replications):
        idx = np.sort(rng.choice(n, size=m, replace=False))
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100,
                    random_state=int(rng.integers(2 ** 31 - 1)))
        labels = km.fit_predict(X[idx])
        same = (labels[:, None] == labels[None, :]).astype(float)
        together[np.ix_(idx, idx)] += same
        sampled[np.ix_(idx, idx)] += 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.where(sampled > 0, together / sampled, 0.0)
    np.fill_diagonal(C, 1.0)
    return C


class ConsensusKMeans(ClusterMixin, BaseEstimator):
    """Consensus k-means with the number of clusters chosen by silhouette.

    For every candidate ``k`` a consensus matrix is accumulated over
    ``replications`` k-means runs on random ``subsample_frac`` subsets; the
    final partition is k-means on the consensus rows, and ``k`` maximizes
    the mean silhouette of that partition on the consensus rows.
    """

    def __init__(self, k_range=range(2, 11), subsample_frac=0.5, replications=200,
                 random_state=None):
        self.k_range = k_range
        self.subsample_frac = subsample_frac
        self.replications = replications
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        ks = sorted(set(int(k) for k in self.k_range))
        if not ks:
            raise ValueError("k_range must not be empty")
        n = X.shape[0]
        if n < ks[0]:
            raise ValueError(f"{n} items cannot be split into {ks[0]} clusters")
        m = max(1, int(round(self.subsample_frac * n)))
        rng = np.random.default_rng(self.random_state)
        self.silhouettes_, self.consensus_, self.partitions_ = {}, {}, {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            for k in ks:
                if k > m:
                    warnings.warn(f"skipping k={k}: larger than the subsample size {m}",
                                  RuntimeWarning, stacklevel=2)
                    continue
                C = consensus_matrix(X, k, self.subsample_frac, self.replications, rng)
                km = KMeans(n_clusters=k, init="k-means++", n_init=10, max_iter=100,
                            random_state=int(rng.integers(2 ** 31 - 1)))
                labels = km.fit_predict(C)
                used = len(np.unique(labels))
                score = silhouette_score(C, labels) if 2 <= used <= n - 1 else -1.0
                self.consensus_[k], self.partitions_[k] = C, labels
                self.silhouettes_[k] = float(score)
        if not self.silhouettes_:
            raise ValueError("no candidate k fits the subsample size")
        best = max(self.silhouettes_, key=lambda k: (self.silhouettes_[k], -k))
        self.n_clusters_ = best
        self.labels_ = self.partitions_[best]
        return self


def two_stage_pipeline(deconvolver=None, clusterer=None) -> Pipeline:
    """Deconvolve traces, then cluster the binary spike rows."""
    return Pipeline([("deconvolve", deconvolver or L0SpikeDeconvolver()),
                     ("cluster", clusterer or ConsensusKMeans())])


def run_two_stage(X, k_range=range(2, 11), replications=200, subsample_frac=0.5,
                  random_state=None):
    """Returns ``(spikes, labels, deconvolver, clusterer)``."""
    pipe = two_stage_pipeline(
        clusterer=ConsensusKMeans(k_range, subsample_frac, replications, random_state))
    labels = pipe.fit_predict(X)
    dec = pipe.named_steps["deconvolve"]
    return dec.spikes_.copy(), labels, dec, pipe.named_steps["cluster"]
