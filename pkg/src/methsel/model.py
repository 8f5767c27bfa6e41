"""Observation model and model-space prior for binomial methylation counts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class PriorConfig:
    """Priors shared by every candidate model.

    q is the prior inclusion probability of each covariate. The Gamma
    (shape, rate) prior applies to every precision parameter that is
    treated as unknown rather than fixed.
    """

    q: float = 0.5
    gamma_shape: float = 1.0
    gamma_rate: float = 5e-5

    def __post_init__(self) -> None:
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"inclusion probability q must be in (0, 1), got {self.q}")
        if self.gamma_shape <= 0.0 or self.gamma_rate <= 0.0:
            raise ValueError("Gamma hyperprior requires positive shape and rate")


def model_key(bits) -> str:
    """Canonical string form of an inclusion vector, e.g. ``'01011'``."""
    return "".join("1" if b else "0" for b in np.asarray(bits).astype(bool))


def key_to_bits(key: str) -> np.ndarray:
    if any(c not in "01" for c in key):
        raise ValueError(f"model key must consist of 0/1 characters, got {key!r}")
    return np.array([c == "1" for c in key], dtype=bool)


def log_model_prior(bits, q: float) -> float:
    """Independent-Bernoulli(q) log prior of an inclusion vector."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"inclusion probability q must be in (0, 1), got {q}")
    bits = np.asarray(bits).astype(bool)
    k = int(bits.sum())
    return k * math.log(q) + (bits.size - k) * math.log1p(-q)


def binomial_loglik(y, n, linear_predictor):
    """Binomial log likelihood with success probability logistic(predictor).

    Parameters
    ----------
    y, n : scalars or arrays
        Methylated counts and total read counts, 0 <= y <= n.
    linear_predictor : scalar or array
        Value of the linear predictor on the logit scale.

    Stable for large |predictor|; empty observations (n = 0) contribute 0.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    eta = np.asarray(linear_predictor, dtype=float)
    if np.any(y < 0) or np.any(n < 0):
        raise ValueError("binomial counts must be nonnegative")
    if np.any(y > n):
        raise ValueError("binomial counts require y <= n")
    out = (
        gammaln(n + 1.0)
        - gammaln(y + 1.0)
        - gammaln(n - y + 1.0)
        + y * eta
        - n * np.logaddexp(0.0, eta)
    )
    if out.ndim == 0:
        return float(out)
    return out


def log_gamma_density(x, shape: float, rate: float):
    """Log density of Gamma(shape, rate) at x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Gamma density requires x > 0")
    out = shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    if out.ndim == 0:
        return float(out)
    return out


def log_gamma_logscale(theta, shape: float, rate: float):
    """Log density of theta = log(tau) when tau ~ Gamma(shape, rate).

    Includes the Jacobian of the log parameterization.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.asarray(log_gamma_density(np.exp(theta), shape, rate)) + theta
    if out.ndim == 0:
        return float(out)
    return out
