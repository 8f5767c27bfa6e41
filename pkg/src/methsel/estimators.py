"""Posterior summaries over the set of explored models.

Two estimators of model probabilities are provided: renormalization of
evidence times prior mass over the visited set, and raw visit frequencies
from the chain histories. The renormalized estimator is exact whenever
the visited set exhausts the model space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mjmcmc import ModelRegistry


def renormalized_probabilities(registry: ModelRegistry) -> dict[str, float]:
    """Model probabilities proportional to evidence times model prior,
    renormalized over the registry."""
    records = registry.records()
    if not records:
        raise ValueError("registry is empty")
    log_post = np.array([r.log_post for r in records])
    w = np.exp(log_post - logsumexp(log_post))
    return {r.key: float(p) for r, p in zip(records, w)}


def frequency_probabilities(
    histories: list[list[str]], burn_in_fraction: float = 0.2
) -> dict[str, float]:
    """Model probabilities as visit frequencies after discarding the first
    burn_in_fraction of every chain."""
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ValueError("burn_in_fraction must be in [0, 1)")
    counts: dict[str, int] = {}
    total = 0
    for hist in histories:
        start = int(len(hist) * burn_in_fraction)
        for key in hist[start:]:
            counts[key] = counts.get(key, 0) + 1
            total += 1
    if total == 0:
        raise ValueError("chain histories are empty after burn-in")
    return {k: c / total for k, c in counts.items()}


def inclusion_probabilities(
    probabilities: dict[str, float], names: list[str] | None = None
) -> dict[str, float]:
    """Per-covariate marginal inclusion: the probability mass of all
    models containing each covariate."""
    if not probabilities:
        raise ValueError("no model probabilities given")
    d = len(next(iter(probabilities)))
    if any(len(k) != d for k in probabilities):
        raise ValueError("model keys differ in length")
    incl = np.zeros(d)
    for key, p in probabilities.items():
        for j, ch in enumerate(key):
            if ch == "1":
                incl[j] += p
    if names is None:
        names = [f"x{j}" for j in range(d)]
    if len(names) != d:
        raise ValueError("names length does not match key length")
    incl = np.clip(incl, 0.0, 1.0)
    return {name: float(v) for name, v in zip(names, incl)}


def mode_model(probabilities: dict[str, float]) -> str:
    """Highest-probability model; ties resolved toward fewer covariates,
    then lexicographically."""
    return min(
        probabilities,
        key=lambda k: (-probabilities[k], k.count("1"), k),
    )


def median_probability_model(inclusion: dict[str, float]) -> str:
    """Model containing exactly the covariates with inclusion above one half."""
    return "".join("1" if v > 0.5 else "0" for v in inclusion.values())


def total_log_evidence_mass(registry: ModelRegistry) -> float:
    """Log of the unnormalized posterior mass captured by the registry."""
    records = registry.records()
    if not records:
        raise ValueError("registry is empty")
    return float(logsumexp(np.array([r.log_post for r in records])))


@dataclass(frozen=True)
class ModelSummary:
    probabilities_rm: dict[str, float]
    probabilities_freq: dict[str, float] | None
    inclusion_rm: dict[str, float]
    inclusion_freq: dict[str, float] | None
    mode: str
    median: str
    log_mass: float
    n_models: int


def summarize(
    registry: ModelRegistry,
    names: list[str],
    histories: list[list[str]] | None = None,
    burn_in_fraction: float = 0.2,
) -> ModelSummary:
    rm = renormalized_probabilities(registry)
    incl_rm = inclusion_probabilities(rm, names)
    freq = None
    incl_freq = None
    if histories is not None and any(histories):
        freq = frequency_probabilities(histories, burn_in_fraction)
        incl_freq = inclusion_probabilities(freq, names)
    return ModelSummary(
        probabilities_rm=rm,
        probabilities_freq=freq,
        inclusion_rm=incl_rm,
        inclusion_freq=incl_freq,
        mode=mode_model(rm),
        median=median_probability_model(incl_rm),
        log_mass=total_log_evidence_mass(registry),
        n_models=len(registry),
    )


def write_models_csv(
    path,
    registry: ModelRegistry,
    rm: dict[str, float],
    mcmc: dict[str, float] | None = None,
) -> None:
    """One row per explored model, sorted by decreasing RM probability."""
    records = sorted(registry.records(), key=lambda r: (-rm[r.key], r.key.count("1"), r.key))
    mcmc = mcmc or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bitstring", "n_covariates", "log_mlik", "log_prior", "rm_pmp", "mcmc_pmp"])
        for r in records:
            writer.writerow(
                [
                    r.key,
                    r.key.count("1"),
                    repr(r.log_mlik),
                    repr(r.log_prior),
                    repr(rm[r.key]),
                    repr(mcmc.get(r.key, 0.0)),
                ]
            )


def write_inclusion_csv(
    path, rm_inclusion: dict[str, float], mcmc_inclusion: dict[str, float] | None = None
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", "rm_inclusion", "mcmc_inclusion"])
        for name, v in rm_inclusion.items():
            row = [name, repr(v)]
            if mcmc_inclusion is None:
                row.append("")
            else:
                row.append(repr(mcmc_inclusion.get(name, 0.0)))
            writer.writerow(row)
