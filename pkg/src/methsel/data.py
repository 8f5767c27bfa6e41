"""Site-level data model: ingestion, covariate encoding, inference split."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CONTEXT_LEVELS = ("CGH", "CHG", "CHH")
GROUP_LEVELS = ("Ma", "Mg", "Md")
STRAND_LEVELS = ("plus", "minus")

# Exact-distance bins; distances above the last edge form the reference bin.
DISTANCE_BINS = (1, 2, 3, 4, 5)
DISTANCE_RANGE_BIN = (6, 20)

CSV_FIELDS = (
    "position",
    "n_reads",
    "y_methylated",
    "context",
    "dist_prev_c",
    "gene_group",
    "coding",
    "strand",
    "expression",
)


class IngestionError(ValueError):
    """Raised when an input file violates the site schema."""


@dataclass(frozen=True)
class ObservationSite:
    """A single cytosine with its counts and annotation."""

    position: int
    n_reads: int
    y_methylated: int
    context: str
    dist_prev_c: int
    gene_group: str
    coding: bool
    strand: str
    expression: float

    def __post_init__(self) -> None:
        if self.n_reads < 0:
            raise ValueError(f"negative read count at position {self.position}")
        if not 0 <= self.y_methylated <= self.n_reads:
            raise ValueError(
                f"methylated count {self.y_methylated} outside [0, {self.n_reads}] "
                f"at position {self.position}"
            )
        if self.context not in CONTEXT_LEVELS:
            raise ValueError(
                f"unknown context {self.context!r} at position {self.position}; "
                f"expected one of {CONTEXT_LEVELS}"
            )
        if self.gene_group not in GROUP_LEVELS:
            raise ValueError(
                f"unknown gene group {self.gene_group!r} at position {self.position}; "
                f"expected one of {GROUP_LEVELS}"
            )
        if self.strand not in STRAND_LEVELS:
            raise ValueError(
                f"unknown strand {self.strand!r} at position {self.position}"
            )
        if self.dist_prev_c < 0:
            raise ValueError(f"negative distance at position {self.position}")


def encode_covariates(
    sites: Sequence[ObservationSite],
    reference_context: str = "CHH",
    reference_group: str = "Md",
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Raw fixed-order design matrix for a list of sites.

    Returns the T x 17 matrix and the column names. Dummy columns drop the
    configured reference level; distances above 20 form the reference
    distance bin. Continuous columns are returned unscaled.
    """
    if reference_context not in CONTEXT_LEVELS:
        raise ValueError(f"unknown reference context {reference_context!r}")
    if reference_group not in GROUP_LEVELS:
        raise ValueError(f"unknown reference group {reference_group!r}")

    contexts = [c for c in CONTEXT_LEVELS if c != reference_context]
    groups = [g for g in GROUP_LEVELS if g != reference_group]

    names: list[str] = []
    names += [f"X_{c}" for c in contexts]
    names += [f"X_DT{k}" for k in DISTANCE_BINS]
    names += [f"X_DT{DISTANCE_RANGE_BIN[0]}_{DISTANCE_RANGE_BIN[1]}"]
    names += ["X_DIST"]
    names += [f"X_{g}" for g in groups]
    names += ["X_CODE", "X_STRD", "X_EXPR"]
    names += [f"X_EXPR_{g[1].lower()}" for g in GROUP_LEVELS]

    T = len(sites)
    X = np.zeros((T, len(names)), dtype=float)
    col = {name: j for j, name in enumerate(names)}
    lo, hi = DISTANCE_RANGE_BIN
    for t, s in enumerate(sites):
        if s.context != reference_context:
            X[t, col[f"X_{s.context}"]] = 1.0
        if s.dist_prev_c in DISTANCE_BINS:
            X[t, col[f"X_DT{s.dist_prev_c}"]] = 1.0
        elif lo <= s.dist_prev_c <= hi:
            X[t, col[f"X_DT{lo}_{hi}"]] = 1.0
        X[t, col["X_DIST"]] = float(s.dist_prev_c)
        if s.gene_group != reference_group:
            X[t, col[f"X_{s.gene_group}"]] = 1.0
        X[t, col["X_CODE"]] = 1.0 if s.coding else 0.0
        X[t, col["X_STRD"]] = 1.0 if s.strand == "plus" else 0.0
        X[t, col["X_EXPR"]] = s.expression
        X[t, col[f"X_EXPR_{s.gene_group[1].lower()}"]] = s.expression
    return X, tuple(names)


CONTINUOUS_COLUMNS = ("X_DIST", "X_EXPR", "X_EXPR_a", "X_EXPR_g", "X_EXPR_d")


def split_dataset(
    sites: Sequence[ObservationSite], read_threshold: int = 3
) -> tuple[list[ObservationSite], list[ObservationSite]]:
    """Split sites into the inference subset (n_reads >= threshold) and the rest.

    Both subsets keep their original order; the second subset retains its
    covariates so the latent field can be interpolated across it.
    """
    inference = [s for s in sites if s.n_reads >= read_threshold]
    identification = [s for s in sites if s.n_reads < read_threshold]
    return inference, identification


@dataclass(frozen=True)
class Dataset:
    """Encoded sites ready for model fitting.

    design holds all T sites in position order; inference_mask marks the
    rows whose likelihood terms enter model comparison. scaling maps each
    standardized column name to the (mean, sd) that was subtracted/divided.
    """

    sites: tuple[ObservationSite, ...]
    design: np.ndarray
    column_names: tuple[str, ...]
    inference_mask: np.ndarray
    read_threshold: int
    scaling: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.sites)

    @property
    def d(self) -> int:
        return self.design.shape[1]

    @property
    def n_inference(self) -> int:
        return int(self.inference_mask.sum())

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sites], dtype=float)

    @property
    def n_reads(self) -> np.ndarray:
        return np.array([s.n_reads for s in self.sites], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([s.y_methylated for s in self.sites], dtype=float)


def build_dataset(
    sites: Sequence[ObservationSite],
    read_threshold: int = 3,
    standardize: bool = True,
    reference_context: str = "CHH",
    reference_group: str = "Md",
) -> Dataset:
    """Encode sites and split them into inference/identification rows.

    Continuous columns are z-scored with inference-subset statistics when
    standardize is on; a zero-variance column is kept raw with a warning.
    """
    sites = tuple(sorted(sites, key=lambda s: s.position))
    positions = [s.position for s in sites]
    for a, b in zip(positions, positions[1:]):
        if a == b:
            raise IngestionError(f"duplicate genomic position {a}")
    if read_threshold < 1:
        raise ValueError("read_threshold must be at least 1")

    X, names = encode_covariates(sites, reference_context, reference_group)
    mask = np.array([s.n_reads >= read_threshold for s in sites], dtype=bool)
    scaling: dict = {}
    if standardize and mask.any():
        for name in CONTINUOUS_COLUMNS:
            if name not in names:
                continue
            j = names.index(name)
            mean = float(X[mask, j].mean())
            sd = float(X[mask, j].std())
            if sd == 0.0:
                warnings.warn(
                    f"column {name} has zero variance on the inference subset; "
                    "kept unscaled"
                )
                continue
            X[:, j] = (X[:, j] - mean) / sd
            scaling[name] = (mean, sd)
    for name in names:
        j = names.index(name)
        if mask.any() and X[mask, j].std() == 0.0 and name not in CONTINUOUS_COLUMNS:
            warnings.warn(f"column {name} has zero variance on the inference subset")
    return Dataset(
        sites=sites,
        design=X,
        column_names=names,
        inference_mask=mask,
        read_threshold=read_threshold,
        scaling=scaling,
    )


def _parse_row(row: dict, line: int) -> ObservationSite:
    def intfield(key: str) -> int:
        try:
            return int(row[key])
        except (KeyError, TypeError, ValueError):
            raise IngestionError(f"row {line}: bad integer field {key}={row.get(key)!r}")

    def floatfield(key: str) -> float:
        try:
            return float(row[key])
        except (KeyError, TypeError, ValueError):
            raise IngestionError(f"row {line}: bad numeric field {key}={row.get(key)!r}")

    coding = row.get("coding")
    strand = row.get("strand")
    if coding not in ("0", "1"):
        raise IngestionError(f"row {line}: coding must be 0 or 1, got {coding!r}")
    if strand not in ("0", "1"):
        raise IngestionError(f"row {line}: strand must be 0 or 1, got {strand!r}")
    try:
        return ObservationSite(
            position=intfield("position"),
            n_reads=intfield("n_reads"),
            y_methylated=intfield("y_methylated"),
            context=str(row.get("context")),
            dist_prev_c=intfield("dist_prev_c"),
            gene_group=str(row.get("gene_group")),
            coding=coding == "1",
            strand="plus" if strand == "1" else "minus",
            expression=floatfield("expression"),
        )
    except ValueError as exc:
        raise IngestionError(f"row {line}: {exc}")


def read_sites_csv(path) -> list[ObservationSite]:
    """Read the site table, validating the schema row by row."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: empty file")
        missing = set(CSV_FIELDS) - set(reader.fieldnames)
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        sites = [_parse_row(row, line) for line, row in enumerate(reader, start=2)]
    if not sites:
        raise IngestionError(f"{path}: no data rows")
    return sites


def write_sites_csv(path, sites: Iterable[ObservationSite]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for s in sites:
            writer.writerow(
                [
                    s.position,
                    s.n_reads,
                    s.y_methylated,
                    s.context,
                    s.dist_prev_c,
                    s.gene_group,
                    1 if s.coding else 0,
                    1 if s.strand == "plus" else 0,
                    repr(float(s.expression)),
                ]
            )
