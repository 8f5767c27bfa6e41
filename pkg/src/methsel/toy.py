"""Conjugate benchmark model and marginal-likelihood comparison harnesses.

The benchmark observes T replicates of a single Gaussian level z with
known noise precision, so the marginal likelihood of the data is available
in closed form. That gives an exact yardstick for the nested-Laplace
engine and exposes the instability of the harmonic-mean estimator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .laplace import (
    EvidenceOracle,
    GaussianLikelihood,
    LaplaceConfig,
    LatentModel,
    marginal_likelihood,
)
from .model import PriorConfig
from .structures import structure_from_label

LOG2PI = math.log(2.0 * math.pi)

# Values printed in the originally published comparison table. They were
# computed on a data realization that was never released, so they are
# carried along as a reference column, not reproduced.
PUBLISHED_TOY_REFERENCE = {0.001: -7.8267, 0.1: -3.2463, 10.0: -2.9041}


@dataclass(frozen=True)
class ToyModel:
    """T observations sharing one latent level z.

    Y_t | z ~ N(z, 1/tau1) independently, z ~ N(0, 1/tau0).
    """

    tau0: float
    tau1: float
    y: np.ndarray

    def __post_init__(self) -> None:
        if self.tau0 <= 0 or self.tau1 <= 0:
            raise ValueError("precisions must be positive")
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if y.ndim != 1 or y.size < 1:
            raise ValueError("y must be a non-empty vector")
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.y.size


def exact_toy_mlik(model: ToyModel) -> float:
    """Closed-form log marginal density of Y.

    Marginally Y is T-variate normal with mean zero and covariance
    I/tau1 + J/tau0, handled through its two distinct eigenvalues.
    """
    a = 1.0 / model.tau1
    b = 1.0 / model.tau0
    T = model.T
    logdet = (T - 1) * math.log(a) + math.log(a + T * b)
    total = float(np.sum(model.y))
    quad = (float(np.sum(model.y**2)) - b * total * total / (a + T * b)) / a
    return -0.5 * (T * LOG2PI + logdet + quad)


def simulate_toy(tau0: float, tau1: float, T: int, seed=0) -> ToyModel:
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 1.0 / math.sqrt(tau0))
    y = rng.normal(z, 1.0 / math.sqrt(tau1), size=T)
    return ToyModel(tau0=tau0, tau1=tau1, y=y)


def harmonic_mean_mlik(model: ToyModel, W: int, seed=0, chunk: int = 1_000_000) -> float:
    """Harmonic mean of the likelihood over exact posterior draws of z.

    Returned in the log domain via a negative log-sum-exp, the stable form
    of log(W / sum_i 1/p(Y|z_i)). Draws come from the closed-form
    conjugate posterior, so any failure here is the estimator's own.
    """
    if W < 1:
        raise ValueError("W must be at least 1")
    rng = np.random.default_rng(seed)
    T = model.T
    post_prec = model.tau0 + T * model.tau1
    post_mean = model.tau1 * float(np.sum(model.y)) / post_prec
    post_sd = 1.0 / math.sqrt(post_prec)

    const = 0.5 * T * (math.log(model.tau1) - LOG2PI)
    sum_y2 = float(np.sum(model.y**2))
    sum_y = float(np.sum(model.y))

    pieces = []
    remaining = W
    while remaining > 0:
        size = min(chunk, remaining)
        z = rng.normal(post_mean, post_sd, size=size)
        # log p(Y|z) expanded in z to avoid materializing a size x T residual
        ll = const - 0.5 * model.tau1 * (sum_y2 - 2.0 * z * sum_y + T * z * z)
        pieces.append(logsumexp(-ll))
        remaining -= size
    return math.log(W) - float(logsumexp(pieces))


def laplace_toy_mlik(model: ToyModel, cfg: LaplaceConfig | None = None) -> float:
    """Engine evidence for the benchmark: intercept-only design, known-noise
    Gaussian likelihood, coefficient precision pinned to tau0."""
    cfg = cfg or LaplaceConfig()
    cfg = LaplaceConfig(
        **{
            **{f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
            "tau_beta": model.tau0,
            "tau_beta_policy": "fixed",
        }
    )
    mdl = LatentModel(
        design=np.ones((model.T, 1)),
        likelihood=GaussianLikelihood(model.y, model.tau1),
        structure=None,
        prior=PriorConfig(),
        cfg=cfg,
        include_iid_field=False,
    )
    return marginal_likelihood(mdl).log_mlik


@dataclass(frozen=True)
class ToyComparison:
    tau0: float
    tau1: float
    T: int
    data_seed: int
    exact: float
    laplace: float
    harmonic: tuple
    published_reference: float | None


def toy_compare(
    tau0_list=(0.001, 0.1, 10.0),
    tau1: float = 1.0,
    T: int = 2,
    seeds=(0, 1, 2, 3, 4),
    W: int = 10_000_000,
    data_seed: int = 0,
) -> list[ToyComparison]:
    """One comparison row per prior precision, ordered ascending.

    Every row simulates a fresh Y (recorded seed), then tabulates the
    closed form, the engine value, and one harmonic-mean estimate per
    seed. The published reference column was computed on different,
    unreleased data and is reported for context only.
    """
    rows = []
    for tau0 in sorted(tau0_list):
        model = simulate_toy(tau0, tau1, T, seed=[data_seed, int(1e6 * tau0)])
        harmonic = tuple(
            harmonic_mean_mlik(model, W=W, seed=[s, int(1e6 * tau0)]) for s in seeds
        )
        rows.append(
            ToyComparison(
                tau0=tau0,
                tau1=tau1,
                T=T,
                data_seed=data_seed,
                exact=exact_toy_mlik(model),
                laplace=laplace_toy_mlik(model),
                harmonic=harmonic,
                published_reference=PUBLISHED_TOY_REFERENCE.get(tau0),
            )
        )
    return rows


def write_toy_csv(path, rows: list[ToyComparison]) -> None:
    n_h = max(len(r.harmonic) for r in rows) if rows else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tau0", "tau1", "T", "data_seed", "exact", "laplace"]
            + [f"hmean_{i + 1}" for i in range(n_h)]
            + ["published_reference_different_data"]
        )
        for r in rows:
            writer.writerow(
                [r.tau0, r.tau1, r.T, r.data_seed, repr(r.exact), repr(r.laplace)]
                + [repr(h) for h in r.harmonic]
                + ["" if r.published_reference is None else r.published_reference]
            )


STRUCTURE_CHOICES = ("rw1", "ou", "ar1", "ar2", "ar3")


def latent_structure_comparison(
    dataset: Dataset,
    models: dict[str, np.ndarray] | None = None,
    structures=STRUCTURE_CHOICES,
    prior: PriorConfig | None = None,
    cfg: LaplaceConfig | None = None,
) -> dict:
    """Log evidence per (model row, structure column), row maxima flagged.

    models maps row labels to inclusion vectors; by default FULL (all
    covariates) and NULL (none). A BEST row is whatever vector the caller
    supplies. Failed cells are reported as None rather than aborting the
    table.
    """
    prior = prior or PriorConfig()
    cfg = cfg or LaplaceConfig()
    if models is None:
        models = {
            "FULL": np.ones(dataset.d, dtype=bool),
            "NULL": np.zeros(dataset.d, dtype=bool),
        }
    labels = tuple(structures)
    cells: dict[str, dict[str, float | None]] = {}
    best: dict[str, str | None] = {}
    for row, bits in models.items():
        cells[row] = {}
        for lab in labels:
            oracle = EvidenceOracle(
                dataset=dataset,
                structure=structure_from_label(lab),
                prior=prior,
                cfg=cfg,
            )
            try:
                cells[row][lab] = oracle(np.asarray(bits, dtype=bool)).log_mlik
            except Exception:
                cells[row][lab] = None
        finite = {k: v for k, v in cells[row].items() if v is not None}
        best[row] = max(finite, key=finite.get) if finite else None
    return {"structures": labels, "cells": cells, "row_best": best}


def write_latent_csv(path, table: dict) -> None:
    labels = table["structures"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + list(labels) + ["best"])
        for row, vals in table["cells"].items():
            writer.writerow(
                [row]
                + ["" if vals[lab] is None else repr(vals[lab]) for lab in labels]
                + [table["row_best"][row] or ""]
            )
