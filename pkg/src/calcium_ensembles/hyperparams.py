"""Prior constants and run configuration.

Every fixed constant of the model lives in :class:`Hyperparams`.  Run options
(chain length, thinning, point-estimate restarts) live in :class:`RunOptions`.
Both can be loaded from a YAML file with :func:`load_config`; unknown keys are
rejected and every constraint is checked at load time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised when a configuration value violates its constraint."""

    def __init__(self, key: str, constraint: str, value: Any = None):
        self.key = key
        self.constraint = constraint
        super().__init__(f"invalid value for {key!r}: {value!r} (expected {constraint})")


_POSITIVE = (
    "C0", "B0", "alpha_sigma", "beta_sigma", "alpha_tau", "beta_tau",
    "alpha_gamma", "beta_gamma", "alpha_a", "beta_a", "alpha_dp",
    "gp_kernel_variance", "gp_kernel_lengthscale", "sigma2_alpha",
    "mh_step_gamma", "mh_step_a",
)


@dataclass(frozen=True)
class Hyperparams:
    """Fixed prior constants of the joint deconvolution/clustering model.

    Gamma priors use the shape-rate parameterization.  ``theta=None`` picks the
    proximity decay from the neuron locations so that the median off-diagonal
    proximity equals ``theta_median_proximity``.
    """

    # calcium layer
    C0: float = 10.0
    b0: float = 0.0
    B0: float = 10.0
    alpha_sigma: float = 2.0
    beta_sigma: float = 2.0
    alpha_tau: float = 2.0
    beta_tau: float = 2.0
    alpha_gamma: float = 9.0
    beta_gamma: float = 1.0
    # amplitude DP
    alpha_a: float = 10.0
    beta_a: float = 1.0
    a_bar: float = 0.5
    alpha_dp: float = 1.0
    J_max: int = 20
    # GP atoms
    mu_stilde: float = -1.5
    gp_kernel_variance: float = 1.0
    gp_kernel_lengthscale: float = 3.0
    p_vecchia: int = 10
    # spatial PSBP
    theta: float | None = None
    theta_median_proximity: float = 0.05
    mu_alpha: float = 0.0
    sigma2_alpha: float = 1.0
    K_max: int = 30
    # Metropolis proposal scales
    mh_step_gamma: float = 0.3
    mh_step_a: float = 0.5

    def __post_init__(self):
        for name in _POSITIVE:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(name, "a finite positive number", value)
        for name in ("b0", "mu_stilde", "mu_alpha", "a_bar"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise ConfigError(name, "a finite number", value)
        if self.a_bar < 0:
            raise ConfigError("a_bar", ">= 0", self.a_bar)
        if self.theta is not None and not (math.isfinite(self.theta) and self.theta > 0):
            raise ConfigError("theta", "a positive number or null", self.theta)
        if not 0 < self.theta_median_proximity < 1:
            raise ConfigError("theta_median_proximity", "in (0, 1)", self.theta_median_proximity)
        if not (isinstance(self.K_max, int) and self.K_max >= 2):
            raise ConfigError("K_max", "an integer >= 2", self.K_max)
        if not (isinstance(self.J_max, int) and self.J_max >= 1):
            raise ConfigError("J_max", "an integer >= 1", self.J_max)
        if not (isinstance(self.p_vecchia, int) and self.p_vecchia >= 1):
            raise ConfigError("p_vecchia", "an integer >= 1", self.p_vecchia)

    def conditioning_depth(self, n_frames: int) -> int:
        """Vecchia depth actually used for a window of ``n_frames`` frames."""
        return max(1, min(self.p_vecchia, n_frames - 1))

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable short hash of all values, used in chain metadata."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class RunOptions:
    iters: int = 15000
    burnin: int = 10000
    thin: int = 5
    store_draws: bool = False
    salso_restarts: int = 16
    n_jobs: int = 1

    def __post_init__(self):
        if not (isinstance(self.iters, int) and self.iters >= 1):
            raise ConfigError("iters", "an integer >= 1", self.iters)
        if not (isinstance(self.burnin, int) and 0 <= self.burnin < self.iters):
            raise ConfigError("burnin", "an integer in [0, iters)", self.burnin)
        if not (isinstance(self.thin, int) and self.thin >= 1):
            raise ConfigError("thin", "an integer >= 1", self.thin)
        if not (isinstance(self.salso_restarts, int) and self.salso_restarts >= 1):
            raise ConfigError("salso_restarts", "an integer >= 1", self.salso_restarts)
        if not (isinstance(self.n_jobs, int) and self.n_jobs >= 1):
            raise ConfigError("n_jobs", "an integer >= 1", self.n_jobs)


@dataclass(frozen=True)
class RunConfig:
    hyper: Hyperparams = field(default_factory=Hyperparams)
    run: RunOptions = field(default_factory=RunOptions)
    label: str = "default"

    def to_dict(self) -> dict:
        return {"label": self.label, "hyper": self.hyper.to_dict(),
                "run": dataclasses.asdict(self.run)}


_HYPER_KEYS = {f.name for f in fields(Hyperparams)}
_RUN_KEYS = {f.name for f in fields(RunOptions)}
_INT_KEYS = {"K_max", "J_max", "p_vecchia", "iters", "burnin", "thin", "salso_restarts", "n_jobs"}


def _coerce(key, value):
    # YAML reads "1e-3" as a string and "10" as int; normalize before validation.
    if key in _INT_KEYS:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        return value
    if key == "store_draws":
        return value
    if key == "theta" and value is None:
        return None
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(key, "a number", value) from None
    if isinstance(value, bool):
        raise ConfigError(key, "a number", value)
    if isinstance(value, int):
        return float(value)
    return value


def _split(mapping: dict, where: str) -> tuple[dict, dict]:
    hyper, run = {}, {}
    for key, value in mapping.items():
        if key in _HYPER_KEYS:
            hyper[key] = _coerce(key, value)
        elif key in _RUN_KEYS:
            run[key] = _coerce(key, value)
        else:
            raise ConfigError(key, f"a known {where} key", value)
    return hyper, run


def config_from_mapping(mapping: dict | None) -> list[RunConfig]:
    """Build one run config, or one per ``sweep`` entry when present."""
    mapping = dict(mapping or {})
    sweep = mapping.pop("sweep", None)
    hyper, run = _split(mapping, "config")
    base = RunConfig(Hyperparams(**hyper), RunOptions(**run))
    if sweep is None:
        return [base]
    if not isinstance(sweep, list) or not sweep:
        raise ConfigError("sweep", "a non-empty list of override mappings", sweep)
    configs = []
    for entry in sweep:
        if not isinstance(entry, dict):
            raise ConfigError("sweep", "a list of mappings", entry)
        h, r = _split(entry, "sweep")
        label = ",".join(f"{k}={v}" for k, v in entry.items())
        configs.append(RunConfig(
            Hyperparams(**{**hyper, **h}), RunOptions(**{**run, **r}), label=label))
    return configs


def load_config(path: str | Path | None) -> list[RunConfig]:
    """Read a YAML config file; an empty or missing path gives all defaults."""
    if path is None:
        return [RunConfig()]
    text = Path(path).read_text()
    mapping = yaml.safe_load(text) if text.strip() else {}
    if mapping is not None and not isinstance(mapping, dict):
        raise ConfigError("<root>", "a mapping", type(mapping).__name__)
    return config_from_mapping(mapping)


def default_config_yaml() -> str:
    data = {**Hyperparams().to_dict(), **dataclasses.asdict(RunOptions())}
    return yaml.safe_dump(data, sort_keys=False)
