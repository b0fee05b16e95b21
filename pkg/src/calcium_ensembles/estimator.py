"""Estimator interface to the joint deconvolution and ensemble clustering model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_locations, check_traces
from .hyperparams import Hyperparams
from .sampler import GibbsSampler
from .summaries import num_clusters_summary, similarity_matrix, vi_point_estimate


class BayesianEnsembleDeconvolver(ClusterMixin, BaseEstimator):
    """Joint spike deconvolution and spatial clustering of calcium traces by MCMC.

    Parameters
    ----------
    hyperparams : Hyperparams, optional
        Prior constants; defaults to ``Hyperparams()``.
    n_iter, burnin, thin : int
        Chain length, discarded prefix and thinning of stored draws.
    salso_restarts : int
        Random restarts of the partition point-estimate search.
    spike_threshold : float
        Posterior spike probability above which a frame counts as a spike.
    gp_update : {"joint", "sequential"}
    store_draws : bool
        Keep per-draw spike and amplitude matrices.
    n_jobs : int
    random_state : int

    Attributes
    ----------
    labels_ : ndarray (n,)
        Point partition, labels ``1..K``.
    similarity_ : ndarray (n, n)
        Posterior co-clustering probabilities.
    spike_probs_, amplitudes_ : ndarray (n, T)
        Posterior means of the spike indicators and amplitudes.
    spikes_ : ndarray (n, T)
        Thresholded ``spike_probs_``.
    gamma_, sigma2_, tau2_ : float
        Posterior means.
    chain_ : ChainOutput
    """

    def __init__(self, hyperparams=None, n_iter=15000, burnin=10000, thin=5,
                 salso_restarts=16, spike_threshold=0.5, gp_update="joint",
                 store_draws=False, n_jobs=1, random_state=0):
        self.hyperparams = hyperparams
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.salso_restarts = salso_restarts
        self.spike_threshold = spike_threshold
        self.gp_update = gp_update
        self.store_draws = store_draws
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y=None, locations=None):
        X = check_traces(X)
        locations = check_locations(locations, X.shape[0])
        hyper = self.hyperparams if self.hyperparams is not None else Hyperparams()
        seed = 0 if self.random_state is None else int(self.random_state)
        self.sampler_ = GibbsSampler(X, locations, hyper, seed=seed, n_jobs=self.n_jobs,
                                     gp_update=self.gp_update)
        chain = self.sampler_.run(self.n_iter, self.burnin, self.thin,
                                  store_draws=self.store_draws)
        self._set_summaries(chain)
        self.n_features_in_ = X.shape[1]
        return self

    def _set_summaries(self, chain):
        self.chain_ = chain
        self.labels_ = vi_point_estimate(chain.partitions, restarts=self.salso_restarts,
                                         rng=chain.meta.get("seed", 0))
        self.similarity_ = similarity_matrix(chain.partitions).probs
        self.cluster_counts_ = num_clusters_summary(chain.partitions)
        self.spike_probs_ = chain.spike_probs
        self.amplitudes_ = chain.amp_means
        self.spikes_ = (chain.spike_probs > self.spike_threshold).astype(np.int8)
        self.gamma_ = float(chain.scalar_traces["gamma"].mean())
        self.sigma2_ = float(chain.scalar_traces["sigma2"].mean())
        self.tau2_ = float(chain.scalar_traces["tau2"].mean())

    @classmethod
    def from_chain(cls, chain, **params):
        """Summaries of an already stored chain without re-running the sampler."""
        est = cls(**params)
        est._set_summaries(chain)
        est.n_features_in_ = chain.spike_probs.shape[1]
        return est

    def transform(self, X=None):
        """Posterior spike probabilities of the fitted traces."""
        check_is_fitted(self, "spike_probs_")
        return self.spike_probs_.copy()
