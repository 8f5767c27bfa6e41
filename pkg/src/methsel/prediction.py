"""Per-site probability tracks, model averaging, and classification.

Tracks cover every site: low-coverage sites excluded from inference carry
zero likelihood weight and receive smoothed field plus covariate
predictions, which is how imputation happens here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import csv

import numpy as np

from .data import Dataset
from .laplace import LaplaceConfig, latent_marginals, make_latent_model, marginal_likelihood
from .model import PriorConfig
from .structures import LatentStructureSpec

METHYLATED = "methylated"
UNMETHYLATED = "unmethylated"


@dataclass(frozen=True)
class PredictionTrack:
    """Posterior probability summaries for every site of a dataset."""

    positions: np.ndarray
    p_mean: np.ndarray
    p_lower: np.ndarray
    p_upper: np.ndarray
    classification: tuple
    naive_rate: np.ndarray
    subset: tuple
    label: str = "mode"

    @property
    def T(self) -> int:
        return self.positions.size


def _classify(p_mean: np.ndarray, threshold: float) -> tuple:
    return tuple(METHYLATED if p > threshold else UNMETHYLATED for p in p_mean)


def classify_sites(track: PredictionTrack, threshold: float = 0.5) -> tuple:
    """Labels at a custom threshold; methylated requires mean strictly above it."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return _classify(track.p_mean, threshold)


def naive_track(dataset: Dataset) -> np.ndarray:
    """Raw methylation rates y/n, NaN where a site has no reads."""
    n = dataset.n_reads.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(n > 0, dataset.y / np.where(n > 0, n, 1.0), np.nan)
    return rate


def probability_track(
    bits,
    dataset: Dataset,
    structure: LatentStructureSpec | None = None,
    prior: PriorConfig | None = None,
    cfg: LaplaceConfig | None = None,
    fixed: dict | None = None,
    quantiles: tuple[float, float] = (0.025, 0.975),
    label: str = "mode",
) -> PredictionTrack:
    """Posterior probability track under a single inclusion vector."""
    structure = structure or LatentStructureSpec(kind="rw1")
    prior = prior or PriorConfig()
    cfg = cfg or LaplaceConfig()
    mdl = make_latent_model(dataset, np.asarray(bits, dtype=bool), structure, prior, cfg, fixed=fixed)
    result = marginal_likelihood(mdl)
    marg = latent_marginals(mdl, result, quantiles=quantiles)
    return PredictionTrack(
        positions=dataset.positions.copy(),
        p_mean=marg.p_mean,
        p_lower=marg.p_lower,
        p_upper=marg.p_upper,
        classification=_classify(marg.p_mean, 0.5),
        naive_rate=naive_track(dataset),
        subset=tuple(
            "inference" if m else "identification" for m in dataset.inference_mask
        ),
        label=label,
    )


def model_averaged_track(
    probabilities: dict[str, float],
    dataset: Dataset,
    top_m: int = 10,
    structure: LatentStructureSpec | None = None,
    prior: PriorConfig | None = None,
    cfg: LaplaceConfig | None = None,
    fixed: dict | None = None,
    quantiles: tuple[float, float] = (0.025, 0.975),
) -> PredictionTrack:
    """Average per-model means and quantile bounds over the top models.

    Models are ranked by probability (ties toward fewer covariates, then
    lexicographic key); the kept weights are renormalized to sum to one.
    """
    if top_m < 1:
        raise ValueError("top_m must be at least 1")
    if not probabilities:
        raise ValueError("no model probabilities given")
    ranked = sorted(probabilities, key=lambda k: (-probabilities[k], k.count("1"), k))
    kept = ranked[: min(top_m, len(ranked))]
    w = np.array([probabilities[k] for k in kept])
    if w.sum() <= 0:
        raise ValueError("kept models carry no probability mass")
    w = w / w.sum()

    mean = lower = upper = None
    base = None
    for key, wk in zip(kept, w):
        bits = np.array([c == "1" for c in key])
        tr = probability_track(
            bits, dataset, structure, prior, cfg, fixed=fixed, quantiles=quantiles
        )
        if base is None:
            base = tr
            mean = wk * tr.p_mean
            lower = wk * tr.p_lower
            upper = wk * tr.p_upper
        else:
            mean = mean + wk * tr.p_mean
            lower = lower + wk * tr.p_lower
            upper = upper + wk * tr.p_upper
    return replace(
        base,
        p_mean=mean,
        p_lower=lower,
        p_upper=upper,
        classification=_classify(mean, 0.5),
        label="averaged",
    )


def write_track_csv(path, dataset: Dataset, tracks: Sequence[PredictionTrack]) -> None:
    """Fixed-order per-site rows, one block per track."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "position",
                "subset",
                "n_reads",
                "y_methylated",
                "naive_rate",
                "post_mean",
                "q025",
                "q975",
                "classification",
                "model",
            ]
        )
        for track in tracks:
            for t in range(track.T):
                rate = track.naive_rate[t]
                writer.writerow(
                    [
                        int(track.positions[t]),
                        track.subset[t],
                        int(dataset.n_reads[t]),
                        int(dataset.y[t]),
                        "" if np.isnan(rate) else repr(float(rate)),
                        repr(float(track.p_mean[t])),
                        repr(float(track.p_lower[t])),
                        repr(float(track.p_upper[t])),
                        track.classification[t],
                        track.label,
                    ]
                )
