"""Nested Laplace approximation for binomial latent-Gaussian models.

The latent vector is laid out as z = (u, beta): u interleaves the active
field components site by site, so the field block of every precision matrix
stays banded, while the regression coefficients form a small dense border
handled by block elimination. The intrinsic random-walk field carries a
sum-to-zero constraint; constrained determinants and variances are obtained
from the unconstrained factorization plus one extra solve.

Hyperparameters are optimized on the log scale (precision parameters) or via
a logit-type map (autoregressive partial correlations). The marginal
likelihood integrates them out either at the posterior mode with a Laplace
correction (``eb``) or by summing over a small grid (``grid``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import expit, logsumexp
from scipy.stats import norm

from .data import Dataset
from .linalg import BorderedSpd, NumericalError, band_matvec, band_quad
from .model import PriorConfig, binomial_loglik, log_gamma_logscale
from .structures import (
    LatentStructureSpec,
    PrecisionMatrix,
    build_ar_precision,
    build_ig_precision,
    build_ou_precision,
    build_rw1_precision,
    constrained_logdet,
)

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LaplaceConfig:
    """Numerical settings for the inner and outer approximations."""

    method: str = "eb"  # "eb" | "grid"
    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    newton_max_halvings: int = 10
    grid_step: float = 0.5
    grid_drop: float = 3.0
    grid_max_per_axis: int = 5
    tau_beta: float = 1e-3
    tau_beta_policy: str = "fixed"  # "fixed" | "hyper"
    log_tau_bound: float = 14.0
    psi_bound: float = 8.0
    optimizer_maxiter: int = 200
    optimizer_ftol: float = 1e-9
    optimizer_gtol: float = 1e-5
    hessian_step: float = 1e-3
    prob_mean_method: str = "plugin"  # "plugin" | "gauss-hermite"
    gh_nodes: int = 21

    def __post_init__(self) -> None:
        if self.method not in ("eb", "grid"):
            raise ValueError(f"unknown marginal-likelihood method {self.method!r}")
        if self.tau_beta_policy not in ("fixed", "hyper"):
            raise ValueError(f"unknown tau_beta policy {self.tau_beta_policy!r}")
        if self.tau_beta <= 0:
            raise ValueError("tau_beta must be positive")
        if self.grid_max_per_axis < 1 or self.grid_max_per_axis % 2 == 0:
            raise ValueError("grid_max_per_axis must be odd and positive")
        if self.prob_mean_method not in ("gauss-hermite", "plugin"):
            raise ValueError(f"unknown mean method {self.prob_mean_method!r}")


class BinomialLikelihood:
    """Per-site binomial likelihood on the logit scale.

    weights multiply each site's contribution; identification sites get
    weight 0 so they shape the field prior but not the evidence.
    """

    def __init__(self, y, n, weights=None):
        self.y = np.asarray(y, dtype=float)
        self.n = np.asarray(n, dtype=float)
        if np.any(self.y < 0) or np.any(self.y > self.n):
            raise ValueError("binomial counts require 0 <= y <= n")
        self.weights = (
            np.ones_like(self.y) if weights is None else np.asarray(weights, dtype=float)
        )
        zeros = np.zeros_like(self.y)
        self._const = float(np.sum(self.weights * binomial_loglik(self.y, self.n, zeros)))
        # binomial_loglik at predictor 0 equals lchoose - n*log(2); separate the terms
        self._const += float(np.sum(self.weights * self.n) * math.log(2.0))

    def loglik(self, eta: np.ndarray) -> float:
        return self._const + float(
            np.sum(self.weights * (self.y * eta - self.n * np.logaddexp(0.0, eta)))
        )

    def eval(self, eta: np.ndarray):
        p = expit(eta)
        ll = self.loglik(eta)
        grad = self.weights * (self.y - self.n * p)
        w = self.weights * self.n * p * (1.0 - p)
        return ll, grad, w


class GaussianLikelihood:
    """Gaussian replacement likelihood with known per-site precision.

    Testing hook: makes the inner approximation exact, so the machinery can
    be validated against closed-form evidence.
    """

    def __init__(self, y, precision, weights=None):
        self.y = np.asarray(y, dtype=float)
        prec = np.asarray(precision, dtype=float)
        self.precision = np.broadcast_to(prec, self.y.shape).astype(float)
        if np.any(self.precision <= 0):
            raise ValueError("observation precision must be positive")
        self.weights = (
            np.ones_like(self.y) if weights is None else np.asarray(weights, dtype=float)
        )
        self._const = 0.5 * float(
            np.sum(self.weights * (np.log(self.precision) - LOG2PI))
        )

    def loglik(self, eta: np.ndarray) -> float:
        r = self.y - eta
        return self._const - 0.5 * float(np.sum(self.weights * self.precision * r * r))

    def eval(self, eta: np.ndarray):
        r = self.y - eta
        ll = self._const - 0.5 * float(np.sum(self.weights * self.precision * r * r))
        grad = self.weights * self.precision * r
        w = self.weights * self.precision
        return ll, grad, w


def _hyper_layout(structure, include_iid_field):
    names: list[str] = []
    if structure is not None:
        names.append("log_tau_field")
        if structure.kind == "ar":
            names += [f"psi_{j}" for j in range(1, structure.order + 1)]
        elif structure.kind == "ou":
            names.append("log_phi")
    if include_iid_field:
        names.append("log_tau_noise")
    names.append("log_tau_beta")
    return tuple(names)


@dataclass(frozen=True)
class LatentModel:
    """One candidate model assembled for the Laplace machinery."""

    design: np.ndarray
    likelihood: object
    structure: LatentStructureSpec | None
    prior: PriorConfig
    cfg: LaplaceConfig
    include_iid_field: bool = True
    positions: np.ndarray | None = None
    fixed: dict = dc_field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.design.ndim != 2:
            raise ValueError("design must be a T x m matrix")
        if self.structure is not None and self.structure.uses_genomic_distance:
            if self.positions is None:
                raise ValueError("distance-aware structure requires site positions")
        names = _hyper_layout(self.structure, self.include_iid_field)
        unknown = set(self.fixed) - set(names)
        if unknown:
            raise ValueError(f"fixed hyperparameters {sorted(unknown)} not in {names}")
        if self.cfg.tau_beta_policy == "fixed" and "log_tau_beta" not in self.fixed:
            object.__setattr__(
                self,
                "fixed",
                {**self.fixed, "log_tau_beta": math.log(self.cfg.tau_beta)},
            )

    @property
    def T(self) -> int:
        return self.design.shape[0]

    @property
    def m(self) -> int:
        return self.design.shape[1]

    @property
    def n_fields(self) -> int:
        return (self.structure is not None) + self.include_iid_field

    @property
    def constrained(self) -> bool:
        return self.structure is not None and self.structure.kind == "rw1"

    @property
    def hyper_names(self) -> tuple[str, ...]:
        return _hyper_layout(self.structure, self.include_iid_field)

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.hyper_names if n not in self.fixed)

    def default_values(self) -> dict:
        values = {}
        for name in self.hyper_names:
            if name == "log_phi":
                gaps = np.diff(self.positions)
                values[name] = -math.log(float(gaps.mean()))
            elif name == "log_tau_beta":
                values[name] = math.log(self.cfg.tau_beta)
            elif name.startswith("psi_"):
                values[name] = 0.0
            else:
                values[name] = 0.0
        values.update(self.fixed)
        return values

    def init_theta(self) -> np.ndarray:
        values = self.default_values()
        return np.array([values[n] for n in self.free_names])

    def bounds(self) -> list[tuple[float, float]]:
        out = []
        for name in self.free_names:
            if name.startswith("psi_"):
                out.append((-self.cfg.psi_bound, self.cfg.psi_bound))
            else:
                out.append((-self.cfg.log_tau_bound, self.cfg.log_tau_bound))
        return out

    def values(self, theta) -> dict:
        theta = np.asarray(theta, dtype=float)
        free = self.free_names
        if theta.shape != (len(free),):
            raise ValueError(f"expected {len(free)} free hyperparameters, got {theta.shape}")
        values = dict(self.fixed)
        values.update(zip(free, theta))
        return values

    def build_fields(self, values: dict) -> list[PrecisionMatrix]:
        fields = []
        if self.structure is not None:
            tau = math.exp(values["log_tau_field"])
            if self.structure.kind == "rw1":
                fields.append(build_rw1_precision(self.T, tau))
            elif self.structure.kind == "ar":
                psis = np.array(
                    [values[f"psi_{j}"] for j in range(1, self.structure.order + 1)]
                )
                partials = np.tanh(0.5 * psis)
                fields.append(
                    build_ar_precision(self.T, self.structure.order, partials, tau)
                )
            else:
                phi = math.exp(values["log_phi"])
                fields.append(build_ou_precision(self.positions, tau, phi))
        if self.include_iid_field:
            fields.append(build_ig_precision(self.T, math.exp(values["log_tau_noise"])))
        return fields

    def hyper_log_prior(self, values: dict) -> float:
        """Joint log prior of the free hyperparameters, on the working scale.

        Precision-type parameters carry the configured Gamma prior plus the
        log-scale Jacobian; partial correlations are uniform on (-1, 1),
        expressed through the logit-type map psi.
        """
        total = 0.0
        for name in self.free_names:
            x = values[name]
            if name.startswith("psi_"):
                # rho = tanh(psi / 2) uniform on (-1, 1): density 1/2 * |drho/dpsi|
                s = expit(x)
                total += math.log(s) + math.log1p(-s)
            else:
                total += log_gamma_logscale(x, self.prior.gamma_shape, self.prior.gamma_rate)
        return total


def make_latent_model(
    dataset: Dataset,
    bits,
    structure: LatentStructureSpec | None,
    prior: PriorConfig,
    cfg: LaplaceConfig,
    likelihood=None,
    include_iid_field: bool = True,
    fixed: dict | None = None,
) -> LatentModel:
    """Assemble the latent model for one inclusion vector over a dataset."""
    bits = np.asarray(bits).astype(bool)
    if bits.shape != (dataset.d,):
        raise ValueError(f"inclusion vector must have length {dataset.d}")
    if dataset.n_inference == 0:
        raise ValueError("dataset has no inference sites")
    design = np.column_stack([np.ones(dataset.T), dataset.design[:, bits]])
    if likelihood is None:
        likelihood = BinomialLikelihood(
            dataset.y, dataset.n_reads, weights=dataset.inference_mask.astype(float)
        )
    positions = dataset.positions if structure is not None and structure.uses_genomic_distance else None
    return LatentModel(
        design=design,
        likelihood=likelihood,
        structure=structure,
        prior=prior,
        cfg=cfg,
        include_iid_field=include_iid_field,
        positions=positions,
        fixed=dict(fixed or {}),
    )


def _interleave_fields(fields: Sequence[PrecisionMatrix], T: int):
    n_f = len(fields)
    if n_f == 0:
        return None, 0
    bw = max(max(f.bandwidth for f in fields) * n_f, n_f - 1)
    bands = np.zeros((bw + 1, n_f * T))
    for i, f in enumerate(fields):
        for k in range(f.bandwidth + 1):
            target = bands[n_f * k, i::n_f]
            if k == 0:
                target += f.bands[0]
            else:
                target[: T - k] += f.bands[k, : T - k]
    return bands, bw


class GaussianApprox:
    """Mode and curvature of the latent field at fixed hyperparameters."""

    def __init__(
        self,
        z,
        n_fields,
        T,
        m,
        factor,
        logdet_constrained,
        f_value,
        loglik,
        predictor,
        converged,
        iterations,
        grad_norm,
        constraint=None,
        v_constraint=None,
    ):
        self.z = z
        self.n_fields = n_fields
        self.T = T
        self.m = m
        self.factor = factor
        self.logdet_constrained = logdet_constrained
        self.f_value = f_value
        self.loglik = loglik
        self.predictor = predictor
        self.converged = converged
        self.iterations = iterations
        self.grad_norm = grad_norm
        self.constraint = constraint
        self.v_constraint = v_constraint

    @property
    def n_u(self) -> int:
        return self.n_fields * self.T

    @property
    def beta(self) -> np.ndarray:
        return self.z[self.n_u :]

    def field(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_fields:
            raise IndexError(f"no field component {i}")
        return self.z[: self.n_u][i :: self.n_fields]


def fit_gaussian_approx(mdl: LatentModel, values: dict, z0=None) -> GaussianApprox:
    """Locate the latent posterior mode at fixed hyperparameters.

    Newton iterations with step halving; when the model carries the
    sum-to-zero constraint, every step is projected so the iterates stay on
    the constraint and convergence is judged on the projected gradient.
    """
    cfg = mdl.cfg
    fields = mdl.build_fields(values)
    n_f = len(fields)
    T, m = mdl.design.shape
    nu = n_f * T
    tau_b = math.exp(values["log_tau_beta"])
    prior_bands, _ = _interleave_fields(fields, T)

    a = None
    if mdl.constrained:
        a = np.zeros(nu + m)
        a[0:nu:n_f] = 1.0

    if z0 is not None and z0.shape == (nu + m,):
        z = z0.copy()
        if a is not None:
            z -= a * (a @ z) / (a @ a)
    else:
        z = np.zeros(nu + m)

    design = mdl.design
    lik = mdl.likelihood

    def predictor_of(zz):
        e = design @ zz[nu:]
        for i in range(n_f):
            e = e + zz[:nu][i::n_f]
        return e

    def prior_quad(zz):
        q = tau_b * float(zz[nu:] @ zz[nu:])
        if nu:
            q += band_quad(prior_bands, zz[:nu])
        return q

    converged = False
    iterations = 0
    factor = None
    f_cur = -np.inf
    ll_cur = -np.inf
    e = predictor_of(z)
    gnorm = np.inf
    for it in range(cfg.newton_max_iter + 1):
        ll_cur, g_e, W = lik.eval(e)
        quad = prior_quad(z)
        f_cur = ll_cur - 0.5 * quad

        grad = np.empty(nu + m)
        if nu:
            grad[:nu] = np.repeat(g_e, n_f) - band_matvec(prior_bands, z[:nu])
        grad[nu:] = design.T @ g_e - tau_b * z[nu:]
        gp = grad if a is None else grad - a * (a @ grad) / (a @ a)
        gnorm = float(np.max(np.abs(gp))) if gp.size else 0.0

        if nu:
            bands_h = prior_bands.copy()
            for i in range(n_f):
                bands_h[0, i::n_f] += W
                for j in range(i + 1, n_f):
                    bands_h[j - i, i::n_f] += W
            C = np.repeat(W[:, None] * design, n_f, axis=0)
        else:
            bands_h = None
            C = None
        S0 = tau_b * np.eye(m) + design.T @ (W[:, None] * design)
        factor = BorderedSpd(bands_h, C, S0)

        if gnorm < cfg.newton_tol:
            converged = True
            break
        if it == cfg.newton_max_iter:
            break

        direction = factor.solve(grad)
        if a is not None:
            va = factor.solve(a)
            direction -= va * (a @ direction) / (a @ va)

        step = 1.0
        improved = False
        for _ in range(cfg.newton_max_halvings + 1):
            z_new = z + step * direction
            e_new = predictor_of(z_new)
            f_new = lik.loglik(e_new) - 0.5 * prior_quad(z_new)
            if f_new >= f_cur - 1e-12:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        z = z_new
        e = e_new
        iterations += 1

    logdet_c = factor.logdet
    va_final = None
    if a is not None:
        va_final = factor.solve(a)
        logdet_c += math.log(float(a @ va_final)) - math.log(float(a @ a))

    return GaussianApprox(
        z=z,
        n_fields=n_f,
        T=T,
        m=m,
        factor=factor,
        logdet_constrained=logdet_c,
        f_value=f_cur,
        loglik=ll_cur,
        predictor=e,
        converged=converged,
        iterations=iterations,
        grad_norm=gnorm,
        constraint=a,
        v_constraint=va_final,
    )


def log_hyper_posterior(mdl: LatentModel, theta, z0=None):
    """Unnormalized log posterior of the hyperparameters.

    Combines the joint density of data and latent mode with the Gaussian
    approximation correction, the Gamma log priors of free precisions and
    the Jacobians of the working parameterization. Returns the value and the
    inner approximation it was computed from.
    """
    values = mdl.values(theta)
    fields = mdl.build_fields(values)
    ga = fit_gaussian_approx(mdl, values, z0=z0)
    prior_logdet = sum(constrained_logdet(f) for f in fields)
    prior_logdet += mdl.m * values["log_tau_beta"]
    val = (
        ga.f_value
        + 0.5 * prior_logdet
        - 0.5 * ga.logdet_constrained
        + mdl.hyper_log_prior(values)
    )
    return val, ga


@dataclass
class HyperOptResult:
    theta: np.ndarray
    values: dict
    lhp: float
    neg_hessian: np.ndarray
    approx: GaussianApprox
    warning: str | None
    n_evals: int


def optimize_hyper(mdl: LatentModel, init=None) -> HyperOptResult:
    """Maximize the hyperparameter log posterior on the working scale.

    Quasi-Newton ascent with box bounds; the returned negative Hessian comes
    from central finite differences at the mode. Deterministic given init.
    """
    free = mdl.free_names
    k = len(free)
    state = {"z": None, "n": 0, "best": (-np.inf, None, None)}

    def evaluate(theta):
        state["n"] += 1
        try:
            val, ga = log_hyper_posterior(mdl, theta, z0=state["z"])
        except NumericalError:
            return -np.inf, None
        if ga.converged:
            state["z"] = ga.z
        if val > state["best"][0]:
            state["best"] = (val, np.array(theta, dtype=float), ga)
        return val, ga

    if k == 0:
        val, ga = evaluate(np.empty(0))
        if ga is None:
            raise NumericalError("inner approximation failed with no free hyperparameters")
        warning = None if ga.converged else "inner approximation did not converge"
        return HyperOptResult(
            theta=np.empty(0),
            values=mdl.values(np.empty(0)),
            lhp=val,
            neg_hessian=np.empty((0, 0)),
            approx=ga,
            warning=warning,
            n_evals=state["n"],
        )

    theta0 = np.asarray(init, dtype=float) if init is not None else mdl.init_theta()
    bounds = mdl.bounds()

    def negf(theta):
        val, _ = evaluate(theta)
        if not np.isfinite(val):
            return 1e12
        return -val

    res = minimize(
        negf,
        theta0,
        method="L-BFGS-B",
        bounds=bounds,
        options={
            "maxiter": mdl.cfg.optimizer_maxiter,
            "ftol": mdl.cfg.optimizer_ftol,
            "gtol": mdl.cfg.optimizer_gtol,
        },
    )
    best_val, best_theta, best_ga = state["best"]
    if best_theta is None:
        raise NumericalError("hyperparameter optimization failed at every evaluation")

    warning = None
    if not res.success and best_val == -np.inf:
        warning = f"optimizer failure: {res.message}"
    for (lo, hi), th in zip(bounds, best_theta):
        if th <= lo + 1e-9 or th >= hi - 1e-9:
            warning = "hyperparameter at optimization bound"

    h = mdl.cfg.hessian_step
    neg_h = np.empty((k, k))
    f0 = best_val

    def f_at(offsets):
        val, _ = evaluate(best_theta + offsets)
        return val

    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        fpp = f_at(ei)
        fmm = f_at(-ei)
        neg_h[i, i] = -(fpp - 2.0 * f0 + fmm) / (h * h)
    for i in range(k):
        for j in range(i + 1, k):
            ei = np.zeros(k)
            ei[i] = h
            ej = np.zeros(k)
            ej[j] = h
            val = -(f_at(ei + ej) - f_at(ei - ej) - f_at(-ei + ej) + f_at(-ei - ej)) / (
                4.0 * h * h
            )
            neg_h[i, j] = val
            neg_h[j, i] = val

    # refit at the mode so the returned approximation matches best_theta
    _, ga = log_hyper_posterior(mdl, best_theta, z0=state["z"])
    if not ga.converged:
        warning = warning or "inner approximation did not converge at the mode"
    return HyperOptResult(
        theta=best_theta,
        values=mdl.values(best_theta),
        lhp=best_val,
        neg_hessian=neg_h,
        approx=ga,
        warning=warning,
        n_evals=state["n"],
    )


@dataclass
class MarginalLikelihoodResult:
    """Approximate evidence of one model, with the mixture used to mix over
    hyperparameter uncertainty."""

    log_mlik: float
    method: str
    eta_mode: dict
    theta_points: np.ndarray
    log_weights: np.ndarray
    grid_points_used: int
    diagnostics: dict


def _logdet_psd(matrix: np.ndarray, floor: float = 1e-8):
    """Log determinant with eigenvalue flooring; flags whether clipping occurred."""
    if matrix.size == 0:
        return 0.0, False
    vals = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    clipped = bool(np.any(vals < floor))
    return float(np.sum(np.log(np.maximum(vals, floor)))), clipped


def marginal_likelihood(mdl: LatentModel, method: str | None = None) -> MarginalLikelihoodResult:
    """Approximate log evidence of one model.

    ``eb`` evaluates the hyperparameter posterior at its mode and applies a
    Laplace correction over the hyperparameters; ``grid`` sums the posterior
    over an axis-aligned grid around the mode with uniform cell areas.
    """
    method = method or mdl.cfg.method
    if method not in ("eb", "grid"):
        raise ValueError(f"unknown marginal-likelihood method {method!r}")
    opt = optimize_hyper(mdl)
    k = len(mdl.free_names)
    diagnostics: dict = {
        "n_lhp_evals": opt.n_evals,
        "opt_warning": opt.warning,
        "inner_converged": opt.approx.converged,
    }
    eta_mode = dict(opt.values)

    if k == 0:
        return MarginalLikelihoodResult(
            log_mlik=opt.lhp,
            method=method,
            eta_mode=eta_mode,
            theta_points=np.zeros((1, 0)),
            log_weights=np.zeros(1),
            grid_points_used=1,
            diagnostics=diagnostics,
        )

    logdet_negh, clipped = _logdet_psd(opt.neg_hessian)
    if clipped:
        diagnostics["hessian_clipped"] = True
    eb_value = opt.lhp + 0.5 * k * LOG2PI - 0.5 * logdet_negh
    diagnostics["eb_log_mlik"] = eb_value

    if method == "eb":
        return MarginalLikelihoodResult(
            log_mlik=eb_value,
            method="eb",
            eta_mode=eta_mode,
            theta_points=opt.theta[None, :],
            log_weights=np.zeros(1),
            grid_points_used=1,
            diagnostics=diagnostics,
        )

    cfg = mdl.cfg
    max_side = (cfg.grid_max_per_axis - 1) // 2
    warm = {"z": opt.approx.z}

    evaluated: dict[tuple, tuple[float, bool]] = {}

    def eval_offset(offset: tuple[int, ...]):
        if offset in evaluated:
            return evaluated[offset]
        theta = opt.theta + cfg.grid_step * np.asarray(offset, dtype=float)
        try:
            val, ga = log_hyper_posterior(mdl, theta, z0=warm["z"])
            ok = ga.converged
            if ok:
                warm["z"] = ga.z
        except NumericalError:
            val, ok = -np.inf, False
        evaluated[offset] = (val, ok)
        return evaluated[offset]

    center = tuple(0 for _ in range(k))
    evaluated[center] = (opt.lhp, opt.approx.converged)

    axis_offsets: list[list[int]] = []
    for i in range(k):
        offs = [0]
        for sign in (+1, -1):
            for j in range(1, max_side + 1):
                off = tuple(sign * j if ii == i else 0 for ii in range(k))
                val, ok = eval_offset(off)
                if not ok or val < opt.lhp - cfg.grid_drop:
                    break
                offs.append(sign * j)
        axis_offsets.append(sorted(offs))

    grid = [()]
    for offs in axis_offsets:
        grid = [g + (o,) for g in grid for o in offs]

    points, lhps, dropped = [], [], 0
    for off in grid:
        val, ok = eval_offset(off)
        if not ok:
            dropped += 1
            continue
        points.append(opt.theta + cfg.grid_step * np.asarray(off, dtype=float))
        lhps.append(val)
    if not points:
        raise NumericalError("every grid point failed to converge")
    if dropped:
        diagnostics["grid_points_dropped"] = dropped

    lhps = np.asarray(lhps)
    log_mlik = float(logsumexp(lhps)) + k * math.log(cfg.grid_step)
    diagnostics["grid_minus_eb"] = log_mlik - eb_value
    log_w = lhps - logsumexp(lhps)

    return MarginalLikelihoodResult(
        log_mlik=log_mlik,
        method="grid",
        eta_mode=eta_mode,
        theta_points=np.asarray(points),
        log_weights=log_w,
        grid_points_used=len(points),
        diagnostics=diagnostics,
    )


def named_precisions(values: dict) -> dict:
    """Human-readable transforms of the working-scale hyperparameters."""
    out = {}
    for name, val in values.items():
        if name.startswith("log_tau") or name == "log_phi":
            out[name] = val
            out[name.replace("log_", "", 1)] = math.exp(val)
        elif name.startswith("psi_"):
            out[name] = val
            out[name.replace("psi_", "partial_corr_", 1)] = math.tanh(0.5 * val)
    return out


@dataclass
class LatentMarginals:
    """Posterior summaries of the latent field mixed over hyperparameters."""

    z_mean: np.ndarray
    z_var: np.ndarray
    predictor_mean: np.ndarray
    predictor_var: np.ndarray
    p_mean: np.ndarray
    p_lower: np.ndarray
    p_upper: np.ndarray
    n_fields: int
    T: int
    m: int

    @property
    def beta_mean(self) -> np.ndarray:
        return self.z_mean[self.n_fields * self.T :]

    @property
    def beta_var(self) -> np.ndarray:
        return self.z_var[self.n_fields * self.T :]


def _posterior_moments(ga: GaussianApprox, design: np.ndarray, chunk: int = 256):
    """Marginal variances of every latent coordinate and every predictor."""
    nu, m, T, n_f = ga.n_u, ga.m, ga.T, ga.n_fields
    N = nu + m
    z_var = np.empty(N)
    for start in range(0, N, chunk):
        idx = np.arange(start, min(start + chunk, N))
        rhs = np.zeros((N, idx.size))
        rhs[idx, np.arange(idx.size)] = 1.0
        sol = ga.factor.solve(rhs)
        z_var[idx] = sol[idx, np.arange(idx.size)]

    e_var = np.empty(T)
    for start in range(0, T, chunk):
        idx = np.arange(start, min(start + chunk, T))
        rhs = np.zeros((N, idx.size))
        for i in range(n_f):
            rhs[n_f * idx + i, np.arange(idx.size)] = 1.0
        rhs[nu:, :] = design[idx].T
        sol = ga.factor.solve(rhs)
        if nu:
            term_u = sol[:nu].reshape(T, n_f, idx.size).sum(axis=1)
            term_u = term_u[idx, np.arange(idx.size)]
        else:
            term_u = 0.0
        term_b = np.einsum("cj,jc->c", design[idx], sol[nu:])
        e_var[idx] = term_u + term_b

    if ga.constraint is not None:
        va = ga.v_constraint
        denom = float(ga.constraint @ va)
        z_var = z_var - va * va / denom
        va_u = va[:nu].reshape(T, n_f).sum(axis=1)
        jva = va_u + design @ va[nu:]
        e_var = e_var - jva * jva / denom
    return np.maximum(z_var, 0.0), np.maximum(e_var, 0.0)


def _gh_mean_expit(mean, var, nodes: int):
    x, w = np.polynomial.hermite.hermgauss(nodes)
    sd = np.sqrt(var)
    vals = expit(mean[:, None] + math.sqrt(2.0) * sd[:, None] * x[None, :])
    return vals @ w / math.sqrt(math.pi)


def _mixture_quantile(means, sds, weights, alpha):
    """Quantile of a Gaussian mixture by bisection on its CDF."""
    if means.shape[0] == 1:
        return means[0] + norm.ppf(alpha) * sds[0]
    lo = float(np.min(means - 10.0 * sds))
    hi = float(np.max(means + 10.0 * sds))

    def cdf(x):
        return float(weights @ norm.cdf((x - means) / sds)) - alpha

    return brentq(cdf, lo, hi, xtol=1e-10)


def latent_marginals(
    mdl: LatentModel,
    result: MarginalLikelihoodResult,
    quantiles: tuple[float, float] = (0.025, 0.975),
) -> LatentMarginals:
    """Mix the per-point Gaussian approximations over hyperparameter points.

    Probability summaries map predictor quantiles through the logistic
    function; the posterior mean of each probability uses Gauss-Hermite
    quadrature unless the plug-in transform is configured.
    """
    weights = np.exp(result.log_weights)
    P = result.theta_points.shape[0]
    warm = None
    comp_e_mean, comp_e_var = [], []
    comp_z_mean, comp_z_var = [], []
    n_f = m = T = 0
    for p in range(P):
        ga = fit_gaussian_approx(mdl, mdl.values(result.theta_points[p]), z0=warm)
        warm = ga.z
        n_f, m, T = ga.n_fields, ga.m, ga.T
        z_var, e_var = _posterior_moments(ga, mdl.design)
        comp_e_mean.append(ga.predictor.copy())
        comp_e_var.append(e_var)
        comp_z_mean.append(ga.z.copy())
        comp_z_var.append(z_var)

    e_means = np.asarray(comp_e_mean)
    e_vars = np.asarray(comp_e_var)
    z_means = np.asarray(comp_z_mean)
    z_vars = np.asarray(comp_z_var)

    z_mean = weights @ z_means
    z_var = weights @ (z_vars + z_means**2) - z_mean**2
    e_mean = weights @ e_means
    e_var = weights @ (e_vars + e_means**2) - e_mean**2
    z_var = np.maximum(z_var, 0.0)
    e_var = np.maximum(e_var, 0.0)

    if mdl.cfg.prob_mean_method == "gauss-hermite":
        p_mean = np.zeros(T)
        for p in range(P):
            p_mean += weights[p] * _gh_mean_expit(e_means[p], e_vars[p], mdl.cfg.gh_nodes)
    else:
        p_mean = expit(e_mean)

    sds = np.sqrt(np.maximum(e_vars, 1e-300))
    lo_q, hi_q = quantiles
    p_lower = np.empty(T)
    p_upper = np.empty(T)
    if P == 1:
        p_lower = expit(e_means[0] + norm.ppf(lo_q) * sds[0])
        p_upper = expit(e_means[0] + norm.ppf(hi_q) * sds[0])
    else:
        for t in range(T):
            p_lower[t] = expit(_mixture_quantile(e_means[:, t], sds[:, t], weights, lo_q))
            p_upper[t] = expit(_mixture_quantile(e_means[:, t], sds[:, t], weights, hi_q))

    return LatentMarginals(
        z_mean=z_mean,
        z_var=z_var,
        predictor_mean=e_mean,
        predictor_var=e_var,
        p_mean=p_mean,
        p_lower=p_lower,
        p_upper=p_upper,
        n_fields=n_f,
        T=T,
        m=m,
    )


@dataclass(frozen=True)
class EvidenceResult:
    """Picklable summary of one model's evidence evaluation."""

    log_mlik: float
    eta_mode: dict
    converged: bool
    method: str


@dataclass(frozen=True)
class EvidenceOracle:
    """Evidence evaluator over the model space; safe to ship to workers."""

    dataset: Dataset
    structure: LatentStructureSpec | None
    prior: PriorConfig
    cfg: LaplaceConfig

    def __call__(self, bits) -> EvidenceResult:
        mdl = make_latent_model(self.dataset, bits, self.structure, self.prior, self.cfg)
        res = marginal_likelihood(mdl)
        return EvidenceResult(
            log_mlik=res.log_mlik,
            eta_mode=res.eta_mode,
            converged=bool(res.diagnostics.get("inner_converged", True))
            and res.diagnostics.get("opt_warning") is None,
            method=res.method,
        )
