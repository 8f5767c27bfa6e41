"""Banded precision builders for the candidate latent dependence structures.

All builders return site-indexed precision matrices in lower banded storage.
The random-walk structure is intrinsic (rank T-1) and carries a sum-to-zero
constraint; every other structure is full rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .linalg import NumericalError, banded_cholesky_logdet, bands_to_dense

STRUCTURE_KINDS = ("rw1", "ar", "ou", "ig")


@dataclass(frozen=True)
class LatentStructureSpec:
    """Choice of dependence structure for the smooth latent field."""

    kind: str
    order: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("rw1", "ar", "ou"):
            raise ValueError(f"unknown structure kind {self.kind!r}")
        if self.kind == "ar":
            if not 1 <= self.order <= 3:
                raise ValueError(f"autoregressive order must be 1..3, got {self.order}")
        elif self.order != 0:
            raise ValueError(f"{self.kind} takes no order parameter")

    @property
    def uses_genomic_distance(self) -> bool:
        return self.kind == "ou"

    @property
    def label(self) -> str:
        return f"ar{self.order}" if self.kind == "ar" else self.kind


def structure_from_label(label: str) -> LatentStructureSpec:
    """Parse a compact label such as "rw1", "ou", or "ar2"."""
    if label == "rw1":
        return LatentStructureSpec(kind="rw1")
    if label == "ou":
        return LatentStructureSpec(kind="ou")
    if label.startswith("ar") and label[2:].isdigit():
        return LatentStructureSpec(kind="ar", order=int(label[2:]))
    raise ValueError(f"unknown structure label {label!r}")


@dataclass(frozen=True)
class PrecisionMatrix:
    """Symmetric banded precision with rank metadata.

    bands[k, i] = Q[i+k, i]; sum_to_zero marks the intrinsic case whose null
    space is the constant vector.
    """

    bands: np.ndarray
    rank: int
    sum_to_zero: bool = False

    @property
    def dim(self) -> int:
        return self.bands.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.bands.shape[0] - 1

    def toarray(self) -> np.ndarray:
        return bands_to_dense(self.bands)


def build_ig_precision(T: int, tau: float) -> PrecisionMatrix:
    """Independent-Gaussian (white noise) field precision tau * I."""
    _check_tau(tau)
    if T < 1:
        raise ValueError("need at least one site")
    bands = np.full((1, T), float(tau))
    return PrecisionMatrix(bands=bands, rank=T)


def build_rw1_precision(T: int, tau: float) -> PrecisionMatrix:
    """First-order random-walk precision tau * R, intrinsic with rank T-1."""
    _check_tau(tau)
    if T < 2:
        raise ValueError("random walk needs at least two sites")
    bands = np.zeros((2, T))
    bands[0] = 2.0
    bands[0, 0] = 1.0
    bands[0, -1] = 1.0
    bands[1, : T - 1] = -1.0
    return PrecisionMatrix(bands=tau * bands, rank=T - 1, sum_to_zero=True)


def _levinson(partials: np.ndarray, gamma0: float):
    """Levinson recursion from partial autocorrelations.

    Returns the prediction coefficients at each order together with the
    one-step prediction variances v[0..p], starting from marginal variance
    gamma0.
    """
    coeffs = []
    v = [gamma0]
    a = np.empty(0)
    for r in partials:
        if a.size == 0:
            a = np.array([r])
        else:
            a = np.append(a - r * a[::-1], r)
        coeffs.append(a.copy())
        v.append(v[-1] * (1.0 - r * r))
    return coeffs, v


def build_ar_precision(
    T: int, order: int, partial_correlations, tau: float
) -> PrecisionMatrix:
    """Stationary autoregressive precision with marginal precision tau.

    The process is parameterized by its partial autocorrelations, each in
    (-1, 1), which keeps every admissible parameter stationary. The banded
    matrix is assembled from the sequential one-step-prediction form, so the
    first `order` sites get the exact stationary boundary treatment.
    """
    _check_tau(tau)
    partials = np.asarray(partial_correlations, dtype=float)
    if partials.shape != (order,):
        raise ValueError(f"expected {order} partial correlations, got {partials.shape}")
    if np.any(np.abs(partials) >= 1.0):
        raise ValueError("partial correlations must lie strictly inside (-1, 1)")
    if T < 1:
        raise ValueError("need at least one site")
    coeffs, v = _levinson(partials, 1.0 / tau)
    bands = np.zeros((order + 1, T))
    for t in range(T):
        m = min(t, order)
        # residual r_t = x_t - sum_j c_j x_{t-j}, variance v[m]
        w = np.ones(1) if m == 0 else np.concatenate([-coeffs[m - 1][::-1], [1.0]])
        inv_v = 1.0 / v[m]
        base = t - m
        for i in range(m + 1):
            for j in range(i, m + 1):
                bands[j - i, base + i] += w[i] * w[j] * inv_v
    return PrecisionMatrix(bands=bands, rank=T)


def build_ou_precision(positions, tau: float, phi: float) -> PrecisionMatrix:
    """Exponentially-decaying Gauss-Markov precision on irregular positions.

    Neighbor correlation is exp(-phi * gap); marginal precision is tau. The
    result is tridiagonal regardless of the spacing.
    """
    _check_tau(tau)
    if phi <= 0:
        raise ValueError(f"decay rate must be positive, got {phi}")
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 1 or pos.size < 1:
        raise ValueError("positions must be a nonempty 1-d array")
    gaps = np.diff(pos)
    if np.any(gaps <= 0):
        raise ValueError("positions must be strictly increasing")
    T = pos.size
    bands = np.zeros((2, T))
    bands[0, 0] = tau
    if T > 1:
        rho = np.exp(-phi * gaps)
        inv_v = tau / (1.0 - rho * rho)
        bands[0, 1:] += inv_v
        bands[0, : T - 1] += rho * rho * inv_v
        bands[1, : T - 1] = -rho * inv_v
    return PrecisionMatrix(bands=bands, rank=T)


def constrained_logdet(Q: PrecisionMatrix) -> float:
    """Log determinant of Q on its own support.

    Full-rank matrices use an ordinary banded Cholesky. The intrinsic
    random-walk case returns the log pseudo-determinant: the constant vector
    is projected out by deleting one site, whose principal minor equals
    pdet(Q) / dim, so the correction log(dim) is added back.
    """
    if not Q.sum_to_zero:
        return banded_cholesky_logdet(Q.bands)
    if Q.rank != Q.dim - 1:
        raise NumericalError("sum-to-zero structure must have rank dim - 1")
    minor = Q.bands[:, : Q.dim - 1]
    return banded_cholesky_logdet(minor) + math.log(Q.dim)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"precision must be positive, got {tau}")
