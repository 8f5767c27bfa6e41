"""Synthetic site tables with known ground truth.

Annotations follow the ingestion schema; methylation counts come from the
same generative model the fitter assumes: logistic predictor from the
standardized design, a centered random-walk field, and independent site
noise. The truth sidecar records everything a recovery test needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset, ObservationSite, build_dataset


def _default_active() -> dict:
    return {"X_CGH": 2.5, "X_CHG": -2.0, "X_CODE": 2.5}


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings; a fixed seed pins the output bytes."""

    T: int = 1000
    intercept: float = -1.0
    active: dict = field(default_factory=_default_active)
    tau_field: float = 100.0
    tau_noise: float = 4.0
    read_mean: float = 8.0
    read_dispersion: float = 5.0
    seed: int = 0
    read_threshold: int = 3

    def __post_init__(self) -> None:
        if self.T < 2:
            raise ValueError("need at least two sites")
        if self.tau_field <= 0 or self.tau_noise <= 0:
            raise ValueError("field precisions must be positive")
        if self.read_mean <= 0 or self.read_dispersion <= 0:
            raise ValueError("read-count parameters must be positive")


def generate_sites(spec: SyntheticSpec) -> tuple[list[ObservationSite], dict]:
    """Simulate sites and return them with the ground-truth sidecar."""
    rng = np.random.default_rng(spec.seed)
    T = spec.T

    gaps = rng.integers(1, 41, size=T)
    positions = 100 + np.cumsum(gaps)
    context = rng.choice(["CGH", "CHG", "CHH"], size=T, p=[0.3, 0.3, 0.4])
    group = rng.choice(["Ma", "Mg", "Md"], size=T, p=[0.3, 0.3, 0.4])
    coding = rng.random(T) < 0.5
    strand = np.where(rng.random(T) < 0.5, "plus", "minus")
    expression = rng.lognormal(mean=0.0, sigma=1.0, size=T)
    p_read = spec.read_dispersion / (spec.read_dispersion + spec.read_mean)
    n_reads = rng.negative_binomial(spec.read_dispersion, p_read, size=T)

    sites = [
        ObservationSite(
            position=int(positions[t]),
            n_reads=int(n_reads[t]),
            y_methylated=0,
            context=str(context[t]),
            dist_prev_c=int(gaps[t]),
            gene_group=str(group[t]),
            coding=bool(coding[t]),
            strand=str(strand[t]),
            expression=float(expression[t]),
        )
        for t in range(T)
    ]

    dataset = build_dataset(sites, read_threshold=spec.read_threshold)
    names = list(dataset.column_names)
    unknown = set(spec.active) - set(names)
    if unknown:
        raise ValueError(f"active covariates {sorted(unknown)} not in the design: {names}")
    beta = np.array([spec.active.get(name, 0.0) for name in names])

    increments = rng.normal(0.0, 1.0 / math.sqrt(spec.tau_field), size=T)
    delta = np.cumsum(increments)
    delta -= delta.mean()
    zeta = rng.normal(0.0, 1.0 / math.sqrt(spec.tau_noise), size=T)

    eta = spec.intercept + dataset.design @ beta + delta + zeta
    p = expit(eta)
    y = rng.binomial(dataset.n_reads.astype(np.int64), p)

    sites = [
        ObservationSite(
            position=s.position,
            n_reads=s.n_reads,
            y_methylated=int(y[t]),
            context=s.context,
            dist_prev_c=s.dist_prev_c,
            gene_group=s.gene_group,
            coding=s.coding,
            strand=s.strand,
            expression=s.expression,
        )
        for t, s in enumerate(sites)
    ]

    truth = {
        "seed": spec.seed,
        "T": T,
        "intercept": spec.intercept,
        "column_names": names,
        "gamma": [name in spec.active for name in names],
        "coefficients": {name: spec.active.get(name, 0.0) for name in names},
        "tau_field": spec.tau_field,
        "tau_noise": spec.tau_noise,
        "read_mean": spec.read_mean,
        "read_dispersion": spec.read_dispersion,
        "read_threshold": spec.read_threshold,
        "delta": delta.tolist(),
        "zeta": zeta.tolist(),
        "eta": eta.tolist(),
        "p": p.tolist(),
    }
    return sites, truth


def generate_dataset(spec: SyntheticSpec) -> tuple[Dataset, dict]:
    """Sites already assembled into the standardized dataset."""
    sites, truth = generate_sites(spec)
    return build_dataset(sites, read_threshold=spec.read_threshold), truth


def write_truth(path, truth: dict) -> None:
    with open(path, "w") as fh:
        json.dump(truth, fh, indent=1)
        fh.write("\n")
