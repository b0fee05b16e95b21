"""Synthetic benchmark: spatially clustered neurons with shared activation curves."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import ndtr

from .clustering import gp_covariance
from .ingest import FluorescenceTraces, load_locations, load_traces, save_locations, save_traces

MIXTURE_WEIGHTS = (0.25, 0.33, 0.42)
MIXTURE_MEANS = ((0.0, 200.0), (110.0, 220.0), (100.0, 150.0))
MIXTURE_VARIANCES = (1000.0, 500.0, 700.0)
AMPLITUDES = (3.0, 6.0, 10.0, 14.0, 25.0)
AMPLITUDE_PROBS = (0.1, 0.3, 0.4, 0.1, 0.1)


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 100
    T: int = 50
    weights: tuple = MIXTURE_WEIGHTS
    means: tuple = MIXTURE_MEANS
    variances: tuple = MIXTURE_VARIANCES
    amplitudes: tuple = AMPLITUDES
    amplitude_probs: tuple = AMPLITUDE_PROBS
    gamma: float = 0.9
    tau2: float = 1.0
    sigma2: float = 1.5
    baseline: float = 0.0
    active_level: float = 0.5
    rest_level: float = -2.0
    poly_degree: int = 6
    gp_variance: float = 0.25
    gp_lengthscale: float = 3.0

    @property
    def K(self):
        return len(self.weights)

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise ValueError("mixture weights, means and variances must align")
        if not np.isclose(sum(self.weights), 1.0):
            raise ValueError("mixture weights must sum to 1")
        if not np.isclose(sum(self.amplitude_probs), 1.0):
            raise ValueError("amplitude probabilities must sum to 1")
        if len(self.amplitudes) != len(self.amplitude_probs):
            raise ValueError("amplitudes and their probabilities must align")
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be positive")
        if self.tau2 < 0 or self.sigma2 < 0:
            raise ValueError("variances must be non-negative")

    @classmethod
    def from_mapping(cls, mapping):
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic config keys: {sorted(unknown)}")
        fixed = {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v)
                     if isinstance(v, list) else v) for k, v in mapping.items()}
        return cls(**fixed)


@dataclass
class SyntheticTruth:
    s_true: np.ndarray
    a_true: np.ndarray
    zeta_true: np.ndarray
    prob_curves: np.ndarray
    locations: np.ndarray
    params: dict = field(default_factory=dict)
    c_true: np.ndarray | None = None


def generate_locations_clusters(n, weights=MIXTURE_WEIGHTS, means=MIXTURE_MEANS,
                                covs=MIXTURE_VARIANCES, rng=None):
    """Draw labels from the mixture weights and coordinates from each component.

    ``covs`` entries may be scalars (isotropic variances) or 2x2 matrices.
    """
    rng = np.random.default_rng(rng)
    weights = np.asarray(weights, dtype=float)
    if not np.isclose(weights.sum(), 1.0):
        raise ValueError("weights must sum to 1")
    zeta = rng.choice(len(weights), size=n, p=weights / weights.sum())
    eps = rng.standard_normal((n, 2))
    roots = [np.sqrt(c) * np.eye(2) if np.ndim(c) == 0 else np.linalg.cholesky(np.asarray(c))
             for c in covs]
    locations = np.empty((n, 2))
    for k in range(len(weights)):
        m = zeta == k
        locations[m] = np.asarray(means[k], dtype=float) + eps[m] @ roots[k].T
    return locations, zeta


def activity_templates(K, T, active=0.5, rest=-2.0):
    """Piecewise-constant latent activity: 2 or 3 active bursts per cluster.

    Burst positions shift with the cluster index so the clusters differ; the
    layout depends only on ``(K, T)``.
    """
    templates = np.full((K, T), float(rest))
    for k in range(K):
        n_bursts = 2 + (k % 2)
        spacing = T / n_bursts
        for m in range(n_bursts):
            length = 5 + (3 * k + 4 * m) % 8
            start = int(m * spacing + k * spacing / max(K, 1)) % max(T, 1)
            templates[k, start:min(start + length, T)] = active
    return templates


def smooth_templates(templates, degree=6):
    """Least-squares polynomial fit of each template over its frame index."""
    K, T = templates.shape
    if T <= degree:
        return templates.copy()
    t = np.arange(T, dtype=float)
    return np.vstack([Polynomial.fit(t, row, degree)(t) if np.all(np.isfinite(row)) else row
                      for row in templates])


def generate_activation_probs(K, T, rng=None, config: SyntheticConfig | None = None,
                              templates=None):
    """Spike-probability curves: template, polynomial smoothing, GP perturbation, probit."""
    config = config or SyntheticConfig()
    rng = np.random.default_rng(rng)
    if K < 1:
        raise ValueError("K must be >= 1")
    if templates is None:
        templates = activity_templates(K, T, config.active_level, config.rest_level)
    mean = smooth_templates(templates, config.poly_degree)
    cov = gp_covariance(T, config.gp_variance, config.gp_lengthscale)
    root = np.linalg.cholesky(cov)
    latent = mean + rng.standard_normal((K, T)) @ root.T
    return ndtr(latent)


def generate_dataset(config: SyntheticConfig | None = None, rng=None):
    """Simulate one replicate: returns ``(traces, locations, truth)``."""
    config = config or SyntheticConfig()
    rng = np.random.default_rng(rng)
    n, T, K = config.n, config.T, config.K
    locations, zeta = generate_locations_clusters(n, config.weights, config.means,
                                                  config.variances, rng)
    probs = generate_activation_probs(K, T, rng, config)
    s = (rng.random((n, T)) < probs[zeta]).astype(np.int8)
    amps = np.asarray(config.amplitudes, dtype=float)
    picks = rng.choice(len(amps), size=(n, T), p=np.asarray(config.amplitude_probs))
    a = np.where(s > 0, amps[picks], 0.0)
    eta = np.sqrt(config.tau2) * rng.standard_normal((n, T))
    eps = np.sqrt(config.sigma2) * rng.standard_normal((n, T))
    c = np.zeros((n, T + 1))
    for t in range(1, T + 1):
        c[:, t] = config.gamma * c[:, t - 1] + a[:, t - 1] + eta[:, t - 1]
    y = config.baseline + c[:, 1:] + eps
    truth = SyntheticTruth(s, a, zeta, probs, locations,
                           {"gamma": config.gamma, "sigma2": config.sigma2, "tau2": config.tau2,
                            "baseline": config.baseline}, c)
    return FluorescenceTraces(y), locations, truth


def save_replicate(directory, traces, locations, truth: SyntheticTruth, config=None):
    """Write traces, locations and ground truth CSVs into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_traces(traces, d / "traces.csv")
    save_locations(locations, d / "locations.csv", list(traces.neuron_ids))
    np.savetxt(d / "spikes_true.csv", truth.s_true, delimiter=",", fmt="%d")
    np.savetxt(d / "amplitudes_true.csv", truth.a_true, delimiter=",", fmt="%.10g")
    np.savetxt(d / "prob_curves.csv", truth.prob_curves, delimiter=",", fmt="%.10g")
    with open(d / "clusters_true.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cluster"])
        for i, k in zip(traces.neuron_ids, truth.zeta_true):
            w.writerow([i, int(k) + 1])
    meta = {"params": truth.params}
    if config is not None:
        meta["config"] = asdict(config)
    (d / "truth.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_replicate(directory):
    d = Path(directory)
    traces = load_traces(d / "traces.csv")
    locations, _ = load_locations(d / "locations.csv")
    s = np.loadtxt(d / "spikes_true.csv", delimiter=",", ndmin=2).astype(np.int8)
    a = np.loadtxt(d / "amplitudes_true.csv", delimiter=",", ndmin=2)
    probs = np.loadtxt(d / "prob_curves.csv", delimiter=",", ndmin=2)
    with open(d / "clusters_true.csv", newline="") as fh:
        zeta = np.array([int(r["cluster"]) - 1 for r in csv.DictReader(fh)])
    params = json.loads((d / "truth.json").read_text())["params"]
    return traces, locations, SyntheticTruth(s, a, zeta, probs, locations, params)
