"""Priors, MAP problem assembly and the stage-1 -> stage-2 Bayesian update.

A MapProblem bundles the per-generator objective pieces behind three
callbacks (model residual, its parameter Jacobian, and the noise covariance),
so the solver works identically on real pipeline problems and on synthetic
test fixtures.

Parameters that are intrinsically positive are optimized in log space; prior
means/variances are mapped by the delta method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import LOG_PARAMS, GeneratorParams, frf_for_params
from .errors import ConfigError, IndefiniteHessian
from .likelihood import InjectionVariables, NoiseCovariance, noise_covariance, residuals
from .spectra import BandMask, SpectralDataset


@dataclass
class GaussianPrior:
    """Diagonal Gaussian prior on the generator parameter vector."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if self.mean.shape != self.var.shape:
            raise ConfigError("prior mean and variance dimensions differ")
        if np.any(self.var <= 0):
            raise ConfigError("prior variances must be positive")

    @property
    def m(self) -> int:
        return self.mean.size


@dataclass
class LaplacePrior:
    """IID Laplace prior on injection variables; lam is the l1 weight."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")


def prior_cost_gaussian(theta_g: np.ndarray, prior: GaussianPrior) -> float:
    """(theta - mean)^T Gamma_g^-1 (theta - mean) with diagonal Gamma_g."""
    d = np.asarray(theta_g, dtype=float) - prior.mean
    return float(np.sum(d * d / prior.var))


def prior_cost_laplace(theta_I: np.ndarray, lam: float) -> float:
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    return float(lam * np.sum(np.abs(theta_I)))


@dataclass
class ParamMap:
    """Mapping between physical generator parameters and optimizer coordinates."""

    template: GeneratorParams

    def __post_init__(self):
        self.names = self.template.free_names()
        self.log_mask = np.array([n in LOG_PARAMS for n in self.names])

    @property
    def m(self) -> int:
        return len(self.names)

    def to_opt(self, phys: np.ndarray) -> np.ndarray:
        phys = np.asarray(phys, dtype=float)
        out = phys.copy()
        out[self.log_mask] = np.log(phys[self.log_mask])
        return out

    def to_phys(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        out[self.log_mask] = np.exp(theta[self.log_mask])
        return out

    def params_for(self, theta: np.ndarray) -> GeneratorParams:
        return self.template.with_values(self.to_phys(theta))

    def prior_to_opt(self, means: np.ndarray, variances: np.ndarray) -> GaussianPrior:
        """Delta-method transform of a physical-space prior into optimizer space."""
        means = np.asarray(means, dtype=float)
        variances = np.asarray(variances, dtype=float)
        t_mean = self.to_opt(means)
        t_var = variances.copy()
        t_var[self.log_mask] = variances[self.log_mask] / means[self.log_mask] ** 2
        return GaussianPrior(mean=t_mean, var=t_var)


@dataclass
class MapProblem:
    """Assembled per-generator MAP objective for one stage.

    Decision layout: stage1 -> theta_g (m,); stage2 -> [theta_g, theta_I, s]
    with theta_I flat as [I_Ir(bins), I_Ii(bins), I_phr(bins), I_phi(bins)].
    """

    stage: str
    prior: GaussianPrior
    lam: float
    included_bins: np.ndarray
    inj_bins: np.ndarray
    residual_fn: Callable
    residual_jac_fn: Callable
    covariance_fn: Callable
    theta0: np.ndarray
    masks: list = field(default_factory=list)
    gen: str = ""

    def __post_init__(self):
        self.included_bins = np.asarray(self.included_bins, dtype=int)
        self.inj_bins = np.asarray(self.inj_bins, dtype=int)
        if self.stage not in ("stage1", "stage2"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.stage == "stage1" and self.inj_bins.size:
            raise ConfigError("stage1 carries no injection variables")

    @property
    def m(self) -> int:
        return self.prior.m

    @property
    def v(self) -> int:
        return self.inj_bins.size

    @property
    def dim(self) -> int:
        return self.m if self.stage == "stage1" else self.m + 8 * self.v

    def split(self, z: np.ndarray):
        """(theta_g, theta_I, s) from the full decision vector."""
        z = np.asarray(z, dtype=float)
        m, v = self.m, self.v
        if self.stage == "stage1":
            return z, np.zeros(0), np.zeros(0)
        return z[:m], z[m : m + 4 * v], z[m + 4 * v :]

    def injections_from_flat(self, theta_I: np.ndarray) -> InjectionVariables:
        v = self.v
        vals = np.asarray(theta_I, dtype=float).reshape(4, v).T
        return InjectionVariables(bins=self.inj_bins, values=vals)

    def injection_jacobian(self) -> np.ndarray:
        """Constant dR/dtheta_I, shape (4n, 4v); residual entries carry -1."""
        n, v = self.included_bins.size, self.v
        J = np.zeros((4 * n, 4 * v))
        pos = {bin_: k for k, bin_ in enumerate(self.included_bins)}
        for row, bin_ in enumerate(self.inj_bins):
            k = pos[bin_]
            for comp in range(4):
                J[comp * n + k, comp * v + row] = -1.0
        return J


def _pipeline_callbacks(pmap, spec, S, Vterm, included_bins, dft_constant, fd_rel_step=1e-6):
    """Model residual, FD parameter Jacobian, and covariance for a real generator."""

    frf_cache = {}
    jac_cache = {}

    def frf_at(theta):
        key = np.asarray(theta, dtype=float).tobytes()
        hit = frf_cache.get(key)
        if hit is None:
            hit = frf_for_params(pmap.params_for(theta), S, Vterm, spec.grid)
            if len(frf_cache) > 64:
                frf_cache.clear()
            frf_cache[key] = hit
        return hit

    def residual_fn(theta):
        return residuals(spec, frf_at(theta), None, included_bins)

    def residual_jac_fn(theta):
        key = np.asarray(theta, dtype=float).tobytes()
        hit = jac_cache.get(key)
        if hit is not None:
            return hit
        R0 = residual_fn(theta)
        J = np.empty((R0.size, pmap.m))
        for i in range(pmap.m):
            h = fd_rel_step * max(1.0, abs(theta[i]))
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            J[:, i] = (residual_fn(tp) - residual_fn(tm)) / (2.0 * h)
        jac_cache.clear()  # only the current iterate is ever re-queried
        jac_cache[key] = (R0, J)
        return R0, J

    def covariance_fn(theta):
        return noise_covariance(
            frf_at(theta), spec.noise_var, spec.K, included_bins, c=dft_constant
        )

    return residual_fn, residual_jac_fn, covariance_fn


def default_lambda(lam0: float, cov: NoiseCovariance) -> float:
    """One-parameter regularization rule: lam0 / sqrt(median diagonal of Gamma_L)."""
    diag = np.concatenate([np.diagonal(cov.blocks, axis1=1, axis2=2).reshape(-1)])
    return float(lam0 * np.median(diag) ** -0.5)


def assemble(
    gen: str,
    stage: str,
    spec: SpectralDataset,
    pmap: ParamMap,
    prior: GaussianPrior,
    masks: list[BandMask],
    terminal: tuple[complex, complex],
    lam: float = 0.0,
    lam0: float | None = None,
    dft_constant: float = 0.5,
) -> MapProblem:
    """Build the MAP problem for one generator and one stage.

    Stage 1 drops the DC bin and all masked bins from R and carries no
    injection variables; stage 2 keeps all non-DC bins and defines injection
    variables on the mask(s).  terminal is (S, Vterm) at the measured steady
    state.  If lam0 is given, lambda is set from the covariance evaluated at
    the prior mean.
    """
    S, Vterm = terminal
    all_bins = np.arange(1, spec.n_bins)  # DC excluded from all residual stacking
    masked = (
        np.unique(np.concatenate([m.bins for m in masks])) if masks else np.zeros(0, int)
    )
    if stage == "stage1":
        included = np.setdiff1d(all_bins, masked)
        inj_bins = np.zeros(0, dtype=int)
    else:
        included = all_bins
        inj_bins = np.concatenate([m.bins for m in masks]) if masks else np.zeros(0, int)
        inj_bins = inj_bins[inj_bins > 0]

    residual_fn, residual_jac_fn, covariance_fn = _pipeline_callbacks(
        pmap, spec, S, Vterm, included, dft_constant
    )
    theta0 = prior.mean.copy()
    if lam0 is not None:
        lam = default_lambda(lam0, covariance_fn(theta0))
    problem = MapProblem(
        stage=stage,
        prior=prior,
        lam=lam if stage == "stage2" else 0.0,
        included_bins=included,
        inj_bins=inj_bins,
        residual_fn=residual_fn,
        residual_jac_fn=residual_jac_fn,
        covariance_fn=covariance_fn,
        theta0=theta0,
        masks=list(masks),
        gen=gen,
    )
    return problem


def posterior_update(theta_map1: np.ndarray, H: np.ndarray) -> GaussianPrior:
    """Stage-1 posterior as the stage-2 prior.

    H is the curvature (Hessian) of the negative log posterior at the stage-1
    solution; the new prior variances are the diagonal of its inverse.
    """
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteHessian("stage-1 Hessian is not positive definite") from exc
    var = np.diag(np.linalg.inv(H)).copy()
    return GaussianPrior(mean=np.asarray(theta_map1, dtype=float).copy(), var=var)
