"""Run configuration: file values, flag overrides, and the manifest hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

from .laplace import LaplaceConfig
from .mjmcmc import ProposalConfig, StopRule
from .model import PriorConfig
from .structures import LatentStructureSpec, structure_from_label


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a run needs, resolvable from a JSON file plus overrides.

    Precedence: built-in defaults, then file values, then explicit flags.
    Seeds are always explicit; nothing is drawn from system entropy.
    """

    input: str | None = None
    out: str = "run_out"
    seed: int = 0
    threads: int = 0  # 0 = all available cores
    read_threshold: int = 3

    structure: str = "rw1"
    method: str = "eb"
    tau_beta: float = 1e-3
    tau_beta_policy: str = "fixed"
    newton_tol: float = 1e-8
    grid_step: float = 0.5
    prob_mean_method: str = "plugin"

    q: float = 0.5
    gamma_shape: float = 1.0
    gamma_rate: float = 5e-5

    n_chains: int = 4
    max_iterations: int = 200
    stop_unique_models: int | None = None
    rho_large: float = 0.05
    rho_randomize: float = 0.1
    local_max_steps: int = 10
    burn_in_fraction: float = 0.2
    top_m: int = 10

    toy_w: int = 10_000_000
    toy_T: int = 2
    toy_seeds: tuple = (0, 1, 2, 3, 4)
    latent_T: int = 500

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_sources(cls, config_path: str | None = None, overrides: dict | None = None):
        values: dict = {}
        if config_path is not None:
            if not os.path.exists(config_path):
                raise ConfigError(f"config file not found: {config_path}")
            try:
                with open(config_path) as fh:
                    loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {config_path} is not valid JSON: {exc}")
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {config_path} must hold a JSON object")
            unknown = set(loaded) - set(cls.field_names())
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            values.update(loaded)
        for key, val in (overrides or {}).items():
            if val is None:
                continue
            if key not in cls.field_names():
                raise ConfigError(f"unknown config key: {key}")
            values[key] = val
        if "toy_seeds" in values:
            values["toy_seeds"] = tuple(values["toy_seeds"])
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc))
        cfg._check()
        return cfg

    def _check(self) -> None:
        try:
            self.structure_spec()
            self.prior_config()
            self.laplace_config()
            self.proposal_config()
            self.stop_rule()
        except ValueError as exc:
            raise ConfigError(str(exc))
        if self.threads < 0:
            raise ConfigError("threads must be 0 (all cores) or positive")
        if self.read_threshold < 1:
            raise ConfigError("read_threshold must be at least 1")
        if self.top_m < 1:
            raise ConfigError("top_m must be at least 1")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigError("burn_in_fraction must be in [0, 1)")

    def validate_paths(self, require_input: bool = False) -> None:
        if require_input:
            if self.input is None:
                raise ConfigError("an input CSV is required (--input or config)")
            if not os.path.exists(self.input):
                raise ConfigError(f"input file not found: {self.input}")

    def structure_spec(self) -> LatentStructureSpec:
        return structure_from_label(self.structure)

    def prior_config(self) -> PriorConfig:
        return PriorConfig(q=self.q, gamma_shape=self.gamma_shape, gamma_rate=self.gamma_rate)

    def laplace_config(self) -> LaplaceConfig:
        return LaplaceConfig(
            method=self.method,
            newton_tol=self.newton_tol,
            grid_step=self.grid_step,
            tau_beta=self.tau_beta,
            tau_beta_policy=self.tau_beta_policy,
            prob_mean_method=self.prob_mean_method,
        )

    def proposal_config(self) -> ProposalConfig:
        return ProposalConfig(
            rho_large=self.rho_large,
            rho_randomize=self.rho_randomize,
            local_max_steps=self.local_max_steps,
        )

    def stop_rule(self) -> StopRule:
        return StopRule(
            unique_models=self.stop_unique_models, max_iterations=self.max_iterations
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["toy_seeds"] = list(self.toy_seeds)
        return out

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()
