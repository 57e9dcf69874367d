"""End-to-end localization: spectra -> per-generator two-stage MAP -> report."""

from __future__ import annotations

import time

import numpy as np

from .bayes import ParamMap, assemble, default_lambda, posterior_update
from .config import LoadedData, RunConfig, priors_from_json, read_dataset
from .dynamics import FREE_PARAMS, GeneratorParams, frf_for_params
from .errors import ConfigError, FolocError
from .report import GeneratorResult, SourceReport
from .solver import (
    SolverSettings,
    injection_norms,
    minimize_stage1,
    minimize_stage2,
    prediction_error_pct,
)
from .spectra import band_mask, spectral_dataset

_TEMPLATE_DEFAULTS = {"classical2": {"Ep": 1.0}, "fluxdecay3": {}}


def terminal_condition(window) -> tuple[complex, complex]:
    """(S, Vterm) at the measured steady state of one PMU window."""
    V0, th0, I0, ph0 = window.steady_state
    Vterm = V0 * np.exp(1j * th0)
    Ibar = I0 * np.exp(1j * ph0)
    return Vterm * np.conj(Ibar), Vterm


def template_params(model_order: str, means: dict) -> GeneratorParams:
    """A GeneratorParams carrying the prior means as its free values."""
    if model_order not in FREE_PARAMS:
        raise ConfigError(f"unknown model_order {model_order!r}")
    kw = dict(_TEMPLATE_DEFAULTS[model_order])
    for name in FREE_PARAMS[model_order]:
        kw[name] = means[name]
    if model_order == "classical2" and "Ep" in means:
        kw["Ep"] = means["Ep"]
    return GeneratorParams(model_order=model_order, **kw)


def predicted_current_spectrum(spec, frf, bins):
    """Model-implied (I~, phi~) columns over the given bins: Y [V~, th~]."""
    b = np.asarray(bins, dtype=int)
    vin = np.stack([spec.Vt[b], spec.tht[b]], axis=1)
    out = np.einsum("nij,nj->ni", frf.Y[b], vin)
    return out


def measured_current_spectrum(spec, bins):
    b = np.asarray(bins, dtype=int)
    return np.stack([spec.It[b], spec.pht[b]], axis=1)


def median_out_of_band_error(spec, params, S, Vterm, masks) -> float:
    """Median per-bin prediction error over all non-DC, unmasked bins."""
    all_bins = np.arange(1, spec.n_bins)
    masked = (
        np.unique(np.concatenate([m.bins for m in masks])) if masks else np.zeros(0, int)
    )
    bins = np.setdiff1d(all_bins, masked)
    frf = frf_for_params(params, S, Vterm, spec.grid)
    err = prediction_error_pct(
        measured_current_spectrum(spec, bins),
        predicted_current_spectrum(spec, frf, bins),
    )
    return float(np.median(err))


def locate_one(
    gen: str,
    spec,
    gp,
    masks,
    terminal,
    cfg: RunConfig,
    settings: SolverSettings | None = None,
):
    """Two-stage MAP solve for one generator; returns (GeneratorResult, solutions)."""
    settings = settings or SolverSettings(gauss_newton=cfg.gauss_newton)
    names = FREE_PARAMS[gp.model_order]
    means, variances = gp.means_vars(names)
    mean_map = dict(zip(names, means))
    if gp.model_order == "classical2" and "Ep" in gp.entries:
        mean_map["Ep"] = gp.entries["Ep"][0]
    pmap = ParamMap(template=template_params(gp.model_order, mean_map))
    prior = pmap.prior_to_opt(means, variances)

    err_prior = median_out_of_band_error(
        spec, pmap.params_for(prior.mean), *terminal, masks
    )

    sol1 = None
    err_stage1 = None
    lam_value = None
    if cfg.stage in ("1", "both"):
        p1 = assemble(
            gen, "stage1", spec, pmap, prior, masks,
            terminal=terminal, dft_constant=cfg.dft_constant,
        )
        sol1 = minimize_stage1(p1, settings)
        err_stage1 = median_out_of_band_error(
            spec, pmap.params_for(sol1.theta_g), *terminal, masks
        )
        prior2 = posterior_update(sol1.theta_g, 0.5 * sol1.H)
    else:
        prior2 = prior

    sol2 = None
    if cfg.stage in ("2", "both"):
        p2 = assemble(
            gen, "stage2", spec, pmap, prior2, masks,
            terminal=terminal, lam0=cfg.lambda0, dft_constant=cfg.dft_constant,
        )
        lam_value = p2.lam
        sol2 = minimize_stage2(p2, settings)

    final = sol2 if sol2 is not None else sol1
    phys = pmap.to_phys(final.theta_g)
    params_map = {n: float(v) for n, v in zip(names, phys)}
    if sol2 is not None and sol2.injections is not None:
        inj = sol2.injections
        norms = injection_norms(inj)
        inf_norm = float(np.max(norms)) if norms.size else 0.0
        inj_bins = [int(b) for b in inj.bins]
        freqs = [float(spec.grid[b] / (2.0 * np.pi)) for b in inj.bins]
        norms = [float(x) for x in norms]
    else:
        inj_bins, freqs, norms, inf_norm = [], [], [], 0.0

    result = GeneratorResult(
        gen=gen,
        params_map2=params_map,
        inj_bins=inj_bins,
        inj_freqs_hz=freqs,
        inj_norms=norms,
        inj_inf_norm=inf_norm,
        is_source=inf_norm > cfg.iota,
        converged_stage1=sol1.converged if sol1 is not None else True,
        converged_stage2=sol2.converged if sol2 is not None else True,
        pred_error_prior_median=err_prior,
        pred_error_stage1_median=err_stage1,
    )
    return result, {"stage1": sol1, "stage2": sol2, "lam": lam_value}


def locate_run(cfg: RunConfig, data: LoadedData | None = None, priors: dict | None = None) -> SourceReport:
    """Run the full localization over every generator in the dataset."""
    cfg.validate()
    if data is None:
        data = read_dataset(cfg.data_dir)
    if priors is None:
        priors = priors_from_json(cfg.priors_path)
    missing = sorted(set(data.windows) - set(priors))
    if missing:
        raise ConfigError(f"no priors for generators {missing}")

    results = []
    lam = {}
    timings = {}
    for gen in sorted(data.windows):
        t0 = time.perf_counter()
        win = data.windows[gen]
        spec = spectral_dataset(win, data.noise_var[gen])
        masks = [
            band_mask(spec.grid, 2.0 * np.pi * f_hz, 2.0 * np.pi * hw_hz)
            for f_hz, hw_hz in cfg.bands
        ]
        try:
            result, sols = locate_one(
                gen, spec, priors[gen], masks, terminal_condition(win), cfg
            )
            if sols["lam"] is not None:
                lam[gen] = float(sols["lam"])
        except FolocError as exc:
            result = GeneratorResult(
                gen=gen,
                params_map2={},
                inj_bins=[],
                inj_freqs_hz=[],
                inj_norms=[],
                inj_inf_norm=0.0,
                is_source=False,
                converged_stage1=False,
                converged_stage2=False,
                failure=f"{type(exc).__name__}: {exc}",
            )
        timings[gen] = time.perf_counter() - t0
        results.append(result)

    return SourceReport(
        generators=results,
        iota=cfg.iota,
        lam=lam,
        seed=cfg.seed if cfg.seed is not None else data.seed,
        timings=timings,
    )
