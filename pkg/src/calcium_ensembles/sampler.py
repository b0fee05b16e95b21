"""Gibbs sampler orchestration: state, sweeps, chain storage and a Geweke harness.

A sweep runs the seven blocks in a fixed order: calcium paths, baselines,
observation variance, state variance, decay, spike/amplitude allocation, and
neuron clustering.  Every block draws its random numbers from its own stream,
in a fixed layout, before any work is split across threads; results therefore
do not depend on ``n_jobs``.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps
from scipy.special import log_ndtr, ndtr

from . import __version__
from ._random import step_streams
from .amplitudes import (
    _atom_update, atom_sufficient_stats, dp_weights, sample_dp_sticks,
    sample_spike_allocations_block, spikes_and_amplitudes,
)
from .calcium import ffbs_sample_block, baseline_moments, sample_gamma, sigma2_posterior, tau2_posterior
from .clustering import (
    PSBPPosterior, VecchiaGP, auto_theta, gp_covariance, log_psbp_weights,
    proximity_matrix, sample_cluster_allocations, sample_gp_atoms, sample_psbp_latents,
)
from .hyperparams import Hyperparams

STEP_KINDS = ("init", "calcium", "baseline", "sigma2", "tau2", "gamma",
              "allocation", "atoms", "sticks", "zeta", "psbp", "gp")
BLOCK_ROWS = 32


class SamplerError(RuntimeError):
    """Numerical failure inside a Gibbs step."""

    def __init__(self, iteration, step, cause):
        self.iteration = iteration
        self.step = step
        super().__init__(f"step {step!r} failed at iteration {iteration}: {cause}")


@dataclass
class ModelState:
    c: np.ndarray
    b: np.ndarray
    gamma: float
    sigma2: float
    tau2: float
    xi: np.ndarray
    amp_atoms: np.ndarray
    dp_sticks: np.ndarray
    zeta: np.ndarray
    gp_atoms: np.ndarray
    psbp_alpha: np.ndarray

    @property
    def s(self):
        return (self.xi > 0).astype(np.int8)

    @property
    def a(self):
        return spikes_and_amplitudes(self.xi, self.amp_atoms)[1]

    @property
    def sa(self):
        return self.a

    def copy(self) -> "ModelState":
        return ModelState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                             for k, v in self.__dict__.items()})


@dataclass
class ChainOutput:
    """Thinned post-burn-in output of one chain.

    ``partitions`` holds raw 0-based cluster indices per stored draw.
    """

    partitions: np.ndarray
    spike_probs: np.ndarray
    amp_means: np.ndarray
    calcium_mean: np.ndarray
    baseline_mean: np.ndarray
    scalar_traces: dict
    meta: dict = field(default_factory=dict)
    spike_draws: np.ndarray | None = None
    amp_draws: np.ndarray | None = None

    @property
    def n_draws(self):
        return self.partitions.shape[0]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = dict(partitions=self.partitions, spike_probs=self.spike_probs,
                      amp_means=self.amp_means, calcium_mean=self.calcium_mean,
                      baseline_mean=self.baseline_mean,
                      **{f"trace_{k}": v for k, v in self.scalar_traces.items()})
        if self.spike_draws is not None:
            arrays["spike_draws"] = self.spike_draws
            arrays["amp_draws"] = self.amp_draws
        with open(directory / "chain.npz", "wb") as fh:
            np.savez(fh, **arrays)
        (directory / "chain.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "ChainOutput":
        directory = Path(directory)
        with np.load(directory / "chain.npz") as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads((directory / "chain.json").read_text())
        traces = {k[len("trace_"):]: arrays.pop(k) for k in list(arrays) if k.startswith("trace_")}
        return cls(
            partitions=arrays["partitions"], spike_probs=arrays["spike_probs"],
            amp_means=arrays["amp_means"], calcium_mean=arrays["calcium_mean"],
            baseline_mean=arrays["baseline_mean"], scalar_traces=traces, meta=meta,
            spike_draws=arrays.get("spike_draws"), amp_draws=arrays.get("amp_draws"))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.partitions, self.spike_probs, self.amp_means, self.calcium_mean,
                    self.baseline_mean, *[self.scalar_traces[k] for k in sorted(self.scalar_traces)]):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


class _Adapter:
    """Burn-in tuning of a proposal scale towards 20-50% acceptance."""

    def __init__(self, step, every=50):
        self.step = step
        self.every = every
        self.tries = 0
        self.hits = 0

    def record(self, tries, hits):
        self.tries += tries
        self.hits += hits

    def maybe_adapt(self, iteration):
        if (iteration + 1) % self.every or self.tries == 0:
            return
        rate = self.hits / self.tries
        if rate < 0.2:
            self.step *= 0.7
        elif rate > 0.5:
            self.step *= 1.4
        self.tries = self.hits = 0


class GibbsSampler:
    """Full-conditional sampler for the joint deconvolution/clustering model.

    Parameters
    ----------
    y : array (n, T)
        Fluorescence traces, one row per neuron.
    locations : array (n, 2) or None
        Neuron coordinates; ``None`` makes neurons spatially unrelated.
    hyper : Hyperparams
    seed : int
    n_jobs : int
        Threads used for the per-neuron blocks.
    gp_update : {"joint", "sequential"}
        How cluster activation paths are redrawn.
    """

    def __init__(self, y, locations=None, hyper=None, seed=0, n_jobs=1, gp_update="joint"):
        self.y = np.ascontiguousarray(y, dtype=float)
        if self.y.ndim != 2 or self.y.shape[0] < 1 or self.y.shape[1] < 1:
            raise ValueError("y must be a non-empty (n, T) array")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("y contains non-finite values")
        self.hyper = hyper if hyper is not None else Hyperparams()
        self.seed = int(seed)
        self.n_jobs = int(n_jobs)
        self.gp_update = gp_update
        n, T = self.y.shape
        h = self.hyper
        if locations is None:
            self.theta = None
            self.proximity = np.eye(n)
        else:
            locations = np.asarray(locations, dtype=float)
            if locations.shape[0] != n:
                raise ValueError("locations must have one row per neuron")
            self.theta = h.theta if h.theta is not None else auto_theta(
                locations, h.theta_median_proximity)
            self.proximity = proximity_matrix(locations, self.theta)
        self.psbp = PSBPPosterior(self.proximity, h.mu_alpha, h.sigma2_alpha)
        self.p_vecchia = h.conditioning_depth(T)
        omega = gp_covariance(T, h.gp_kernel_variance, h.gp_kernel_lengthscale)
        self.vecchia = VecchiaGP(omega, self.p_vecchia, h.mu_stilde) if T > 1 else \
            _SingleFrameGP(omega[0, 0], h.mu_stilde)
        self.streams = step_streams(self.seed, STEP_KINDS)
        self.gamma_adapter = _Adapter(h.mh_step_gamma)
        self.atom_adapter = _Adapter(h.mh_step_a)
        self._pool = None

    @property
    def shape(self):
        return self.y.shape

    # ------------------------------------------------------------------ init
    def init_state(self) -> ModelState:
        """Heuristic start: median baselines, zero spikes, one cluster."""
        h = self.hyper
        n, T = self.y.shape
        rng = self.streams["init"]
        b = np.median(self.y, axis=1)
        c = np.empty((n, T + 1))
        c[:, 1:] = self.y - b[:, None]
        c[:, 0] = c[:, 1]
        sigma2, tau2 = _moment_variances(self.y)
        sticks = rng.beta(1.0, h.alpha_dp, size=h.J_max)
        sticks[-1] = 1.0
        return ModelState(
            c=c, b=b, gamma=h.alpha_gamma / (h.alpha_gamma + h.beta_gamma),
            sigma2=sigma2, tau2=tau2,
            xi=np.zeros((n, T), dtype=np.int64),
            amp_atoms=h.a_bar + rng.gamma(h.alpha_a, 1.0 / h.beta_a, size=h.J_max),
            dp_sticks=sticks,
            zeta=np.zeros(n, dtype=np.int64),
            gp_atoms=np.full((h.K_max, T), h.mu_stilde),
            psbp_alpha=np.zeros((h.K_max, n)),
        )

    # ----------------------------------------------------------------- steps
    def _map_rows(self, fn):
        # rows are independent and their noise is drawn up front, so the
        # split below cannot change any result
        n = self.y.shape[0]
        blocks = [slice(i, min(i + BLOCK_ROWS, n)) for i in range(0, n, BLOCK_ROWS)]
        if self._pool is None or len(blocks) == 1:
            fn(slice(None))
        else:
            list(self._pool.map(fn, blocks))

    def step_calcium(self, st: ModelState):
        n, T = self.y.shape
        eps = self.streams["calcium"].standard_normal((n, T + 1))
        out = np.empty((n, T + 1))
        sa = np.ascontiguousarray(st.a)

        def work(blk):
            ffbs_sample_block(self.y[blk], st.b[blk], st.gamma, st.sigma2, st.tau2,
                              sa[blk], self.hyper.C0, eps[blk], out[blk])

        if not (st.sigma2 > 0 and st.tau2 > 0):
            raise ValueError("non-positive variance")
        self._map_rows(work)
        st.c = out

    def step_baseline(self, st: ModelState):
        mean, var = baseline_moments(self.y, st.c, st.sigma2, self.hyper.b0, self.hyper.B0)
        st.b = mean + math.sqrt(var) * self.streams["baseline"].standard_normal(len(mean))

    def step_sigma2(self, st: ModelState):
        shape, rate = sigma2_posterior(self.y, st.b, st.c, self.hyper.alpha_sigma,
                                       self.hyper.beta_sigma)
        st.sigma2 = 1.0 / self.streams["sigma2"].gamma(shape, 1.0 / rate)

    def step_tau2(self, st: ModelState):
        shape, rate = tau2_posterior(st.c, st.gamma, st.a, self.hyper.alpha_tau,
                                     self.hyper.beta_tau)
        st.tau2 = 1.0 / self.streams["tau2"].gamma(shape, 1.0 / rate)

    def step_gamma(self, st: ModelState):
        rng = self.streams["gamma"]
        st.gamma, accepted = sample_gamma(
            st.gamma, st.c, st.a, st.tau2, self.hyper.alpha_gamma, self.hyper.beta_gamma,
            self.gamma_adapter.step, noise=rng.standard_normal(), u=rng.random())
        self.gamma_adapter.record(1, int(accepted))

    def step_allocation(self, st: ModelState):
        n, T = self.y.shape
        u = self.streams["allocation"].random((n, T))
        resid = st.c[:, 1:] - st.gamma * st.c[:, :-1]
        if not np.all(np.isfinite(st.gp_atoms)):
            raise FloatingPointError("non-finite activation path")
        log_on = log_ndtr(st.gp_atoms)[st.zeta]
        log_off = log_ndtr(-st.gp_atoms)[st.zeta]
        weights = dp_weights(st.dp_sticks)
        xi = np.empty((n, T), dtype=np.int64)

        def work(blk):
            sample_spike_allocations_block(resid[blk], None, st.amp_atoms, weights, st.tau2,
                                           u[blk], xi[blk], log_on[blk], log_off[blk])

        self._map_rows(work)
        st.xi = xi

    def step_atoms(self, st: ModelState):
        h = self.hyper
        rng = self.streams["atoms"]
        J = h.J_max
        noise = rng.standard_normal(J)
        u = rng.random(J)
        fresh = h.a_bar + rng.gamma(h.alpha_a, 1.0 / h.beta_a, size=J)
        resid = st.c[:, 1:] - st.gamma * st.c[:, :-1]
        counts, s1, s2 = atom_sufficient_stats(st.xi, resid, J)
        st.amp_atoms, accepted = _atom_update(
            st.amp_atoms, counts, s1, s2, st.tau2, h.alpha_a, h.beta_a, h.a_bar,
            self.atom_adapter.step, noise, u, fresh)
        self.atom_adapter.record(int((counts > 0).sum()), int(accepted.sum()))

    def step_sticks(self, st: ModelState):
        st.dp_sticks = sample_dp_sticks(st.xi, self.hyper.J_max, self.hyper.alpha_dp,
                                        self.streams["sticks"])

    def step_zeta(self, st: ModelState):
        u = self.streams["zeta"].random(self.y.shape[0])
        st.zeta = sample_cluster_allocations(st.s, st.gp_atoms, log_psbp_weights(st.psbp_alpha),
                                             u=u)

    def step_psbp(self, st: ModelState):
        st.psbp_alpha = sample_psbp_latents(st.zeta, st.psbp_alpha, self.psbp,
                                            self.streams["psbp"])

    def step_gp(self, st: ModelState):
        st.gp_atoms = sample_gp_atoms(st.zeta, st.s, st.gp_atoms, self.vecchia,
                                      self.streams["gp"], method=self.gp_update)

    STEPS = ("calcium", "baseline", "sigma2", "tau2", "gamma",
             "allocation", "atoms", "sticks", "zeta", "psbp", "gp")

    def sweep(self, st: ModelState, iteration=0) -> ModelState:
        for name in self.STEPS:
            try:
                with np.errstate(over="raise", invalid="raise", under="ignore", divide="ignore"):
                    getattr(self, f"step_{name}")(st)
            except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
                raise SamplerError(iteration, name, exc) from exc
        return st

    # ------------------------------------------------------------------- run
    def run(self, iters, burnin, thin=1, store_draws=False, state=None,
            adapt=True, callback=None) -> ChainOutput:
        """Run ``iters`` sweeps and keep every ``thin``-th draw after ``burnin``."""
        if not 0 <= burnin < iters:
            raise ValueError("burnin must satisfy 0 <= burnin < iters")
        if thin < 1:
            raise ValueError("thin must be >= 1")
        n, T = self.y.shape
        st = state if state is not None else self.init_state()
        kept = range(burnin, iters, thin)
        D = len(kept)
        partitions = np.empty((D, n), dtype=np.int64)
        spike_sum = np.zeros((n, T))
        amp_sum = np.zeros((n, T))
        c_sum = np.zeros((n, T + 1))
        b_sum = np.zeros(n)
        traces = {k: np.empty(D) for k in ("gamma", "sigma2", "tau2", "n_clusters")}
        s_draws = np.empty((D, n, T), dtype=np.int8) if store_draws else None
        a_draws = np.empty((D, n, T)) if store_draws else None
        d = 0
        pool = ThreadPoolExecutor(self.n_jobs) if self.n_jobs > 1 else None
        self._pool = pool
        try:
            for it in range(iters):
                self.sweep(st, it)
                if adapt and it < burnin:
                    self.gamma_adapter.maybe_adapt(it)
                    self.atom_adapter.maybe_adapt(it)
                if callback is not None:
                    callback(it, st)
                if it >= burnin and (it - burnin) % thin == 0:
                    s, a = spikes_and_amplitudes(st.xi, st.amp_atoms)
                    partitions[d] = st.zeta
                    spike_sum += s
                    amp_sum += a
                    c_sum += st.c
                    b_sum += st.b
                    traces["gamma"][d] = st.gamma
                    traces["sigma2"][d] = st.sigma2
                    traces["tau2"][d] = st.tau2
                    traces["n_clusters"][d] = len(np.unique(st.zeta))
                    if store_draws:
                        s_draws[d] = s
                        a_draws[d] = a
                    d += 1
        finally:
            if pool is not None:
                pool.shutdown()
            self._pool = None
        self.state_ = st
        meta = {
            "seed": self.seed, "iters": iters, "burnin": burnin, "thin": thin, "draws": D,
            "n_neurons": n, "n_frames": T, "hyper": self.hyper.to_dict(),
            "hyper_hash": self.hyper.digest(), "theta": self.theta,
            "p_vecchia": self.p_vecchia, "gp_update": self.gp_update,
            "mh_step_gamma": self.gamma_adapter.step, "mh_step_a": self.atom_adapter.step,
            "version": __version__,
        }
        return ChainOutput(partitions, spike_sum / D, amp_sum / D, c_sum / D, b_sum / D,
                           traces, meta, s_draws, a_draws)


class _SingleFrameGP:
    """Degenerate one-frame GP prior used when a window has a single frame."""

    def __init__(self, variance, mean):
        self.T = 1
        self.mean = mean
        self.variance = variance
        self.precision = np.array([[1.0 / variance]])

    def prior_sample(self, eps):
        return self.mean + math.sqrt(self.variance) * np.atleast_2d(eps)

    def posterior_sample(self, n, z_sum, eps):
        v = 1.0 / (1.0 / self.variance + n)
        return v * (self.mean / self.variance + np.asarray(z_sum)) + math.sqrt(v) * eps

    def sequential_sample(self, n, z_sum, eps):
        n = np.asarray(n, dtype=float)[:, None]
        v = 1.0 / (1.0 / self.variance + n)
        return v * (self.mean / self.variance + np.atleast_2d(z_sum)) + np.sqrt(v) * eps


def _moment_variances(y):
    """Observation and state variances from the first differences of the traces.

    With ``gamma`` near one the differences behave like MA(1): variance
    ``tau2 + 2 sigma2`` and lag-one covariance ``-sigma2``.
    """
    floor = 1e-2
    if y.shape[1] < 3:
        v = float(np.var(y)) if y.size > 1 else 1.0
        return max(v / 2, floor), max(v / 2, floor)
    d = np.diff(y, axis=1)
    v = float(np.mean(d * d))
    lag = float(np.mean(d[:, 1:] * d[:, :-1]))
    sigma2 = max(-lag, 0.1 * v, floor)
    tau2 = max(v - 2.0 * sigma2, 0.1 * v, floor)
    return sigma2, tau2


def init_state(y, locations=None, hyper=None, seed=0) -> ModelState:
    return GibbsSampler(y, locations, hyper, seed).init_state()


def run_chain(y, locations=None, hyper=None, iters=1000, burnin=500, thin=1, seed=0,
              n_jobs=1, store_draws=False, gp_update="joint") -> ChainOutput:
    sampler = GibbsSampler(y, locations, hyper, seed, n_jobs=n_jobs, gp_update=gp_update)
    return sampler.run(iters, burnin, thin, store_draws=store_draws)


# ---------------------------------------------------------------------------
# prior simulation and the Geweke joint-distribution test
# ---------------------------------------------------------------------------

def sample_prior(sampler: GibbsSampler, rng) -> ModelState:
    """Draw every latent quantity from the (truncated) prior the sampler targets."""
    h = sampler.hyper
    n, T = sampler.shape
    gamma = rng.beta(h.alpha_gamma, h.beta_gamma)
    sigma2 = 1.0 / rng.gamma(h.alpha_sigma, 1.0 / h.beta_sigma)
    tau2 = 1.0 / rng.gamma(h.alpha_tau, 1.0 / h.beta_tau)
    b = h.b0 + math.sqrt(h.B0) * rng.standard_normal(n)
    alpha = sampler.psbp.prior_sample(rng.standard_normal((h.K_max, n)))
    zeta = sample_cluster_allocations(np.zeros((n, 0)), np.zeros((h.K_max, 0)),
                                      log_psbp_weights(alpha), rng)
    gp_atoms = sampler.vecchia.prior_sample(rng.standard_normal((h.K_max, T)))
    sticks = rng.beta(1.0, h.alpha_dp, size=h.J_max)
    sticks[-1] = 1.0
    atoms = h.a_bar + rng.gamma(h.alpha_a, 1.0 / h.beta_a, size=h.J_max)
    s = rng.random((n, T)) < ndtr(gp_atoms[zeta])
    w = dp_weights(sticks)
    which = rng.choice(h.J_max, size=(n, T), p=w / w.sum()) + 1
    xi = np.where(s, which, 0).astype(np.int64)
    a = np.concatenate(([0.0], atoms))[xi]
    c = np.empty((n, T + 1))
    c[:, 0] = math.sqrt(h.C0) * rng.standard_normal(n)
    eta = math.sqrt(tau2) * rng.standard_normal((n, T))
    for t in range(1, T + 1):
        c[:, t] = gamma * c[:, t - 1] + a[:, t - 1] + eta[:, t - 1]
    return ModelState(c=c, b=b, gamma=gamma, sigma2=sigma2, tau2=tau2, xi=xi,
                      amp_atoms=atoms, dp_sticks=sticks, zeta=zeta, gp_atoms=gp_atoms,
                      psbp_alpha=alpha)


def simulate_observations(st: ModelState, rng):
    n, T = st.xi.shape
    return st.b[:, None] + st.c[:, 1:] + math.sqrt(st.sigma2) * rng.standard_normal((n, T))


def _geweke_quantities(st: ModelState):
    s, a = spikes_and_amplitudes(st.xi, st.amp_atoms)
    return np.array([
        st.gamma, math.log(st.sigma2), math.log(st.tau2), s.mean(), a.mean(),
        st.b.mean(), st.c.mean(), len(np.unique(st.zeta)), st.gp_atoms.mean(),
        st.psbp_alpha.mean(),
    ])


GEWEKE_NAMES = ("gamma", "log_sigma2", "log_tau2", "spike_rate", "mean_amplitude",
                "mean_baseline", "mean_calcium", "n_clusters", "mean_gp_atom", "mean_psbp_alpha")


def _statistics(q):
    return np.concatenate([q, q * q])


def _mcmc_se(x):
    """Standard error of a chain mean from its initial-positive-sequence ESS."""
    from .summaries import effective_sample_size
    if np.var(x) == 0:
        return 0.0
    return float(np.std(x, ddof=1) / math.sqrt(effective_sample_size(x)))


@dataclass
class GewekeReport:
    names: list
    z: np.ndarray
    p_values: np.ndarray
    cycles: int
    diverged_at: int | None = None

    @property
    def min_p(self):
        return float(self.p_values.min())

    def passed(self, level=0.01):
        """Bonferroni-adjusted: every p-value above ``level / n_statistics``."""
        return bool(np.all(self.p_values > level / len(self.p_values)))


def geweke_check(hyper=None, n_small=3, T_small=8, cycles=20000, seed=0,
                 sampler_cls=GibbsSampler, locations=None, **sampler_kwargs) -> GewekeReport:
    """Compare marginal-conditional and successive-conditional simulators.

    The successive-conditional chain alternates one Gibbs sweep with a fresh
    draw of the observations given the current state; if every conditional is
    correct both simulators share the prior marginals of the monitored
    statistics.  MH proposal scales are held fixed.  Standard errors of the
    successive chain use its effective sample size; a chain that fails
    numerically is reported with every p-value at zero.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if n_small > 5 or T_small > 10:
        raise ValueError("the Geweke harness is meant for n <= 5 and T <= 10")
    hyper = hyper if hyper is not None else Hyperparams()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    if locations is None:
        locations = rng.uniform(0, 1, size=(n_small, 2))
    dummy = np.zeros((n_small, T_small))
    sampler = sampler_cls(dummy, locations, hyper, seed=seed, **sampler_kwargs)

    marginal = np.empty((cycles, 20))
    for m in range(cycles):
        marginal[m] = _statistics(_geweke_quantities(sample_prior(sampler, rng)))

    st = sample_prior(sampler, rng)
    successive = np.empty((cycles, 20))
    diverged = None
    for m in range(cycles):
        sampler.y = simulate_observations(st, rng)
        try:
            sampler.sweep(st, m)
        except SamplerError:
            # a broken conditional can drive the chain to overflow; that is a failure
            diverged = m
            break
        successive[m] = _statistics(_geweke_quantities(st))
    names = list(GEWEKE_NAMES) + [f"{k}^2" for k in GEWEKE_NAMES]
    if diverged is not None:
        # under a correct sampler the successive chain is stationary at the
        # prior, so a numerical blow-up is itself a rejection
        return GewekeReport(names, np.full(20, np.inf), np.zeros(20), cycles, diverged)

    se_m = marginal.std(axis=0, ddof=1) / math.sqrt(cycles)
    with np.errstate(over="ignore", invalid="ignore"):
        se_s = np.array([_mcmc_se(successive[:, j]) for j in range(20)])
        diff = marginal.mean(axis=0) - successive.mean(axis=0)
        denom = np.sqrt(se_m ** 2 + se_s ** 2)
        z = np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), 0.0)
    z = np.where(np.isfinite(z), z, np.inf)
    p = 2.0 * sps.norm.sf(np.abs(z))
    return GewekeReport(names, z, p, cycles, diverged)
