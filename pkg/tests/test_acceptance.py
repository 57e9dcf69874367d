"""End-to-end acceptance suite.

Each test class exercises one headline property of the toolkit, from full
scenario reproduction down to optimizer oracle equivalence.  The four-machine
and ten-machine studies are simulated once per module and shared.
"""

import time

import numpy as np
import pytest
from test_solver import make_problem, ridge_solution

from foloc.bayes import GaussianPrior, MapProblem, ParamMap, assemble, posterior_update
from foloc.config import GenPrior, LoadedData, RunConfig
from foloc.dynamics import FREE_PARAMS, Frf, frf_for_params
from foloc.fixtures import build_priors, four_bus_scenario, ten_gen_scenario
from foloc.likelihood import NoiseCovariance, noise_covariance
from foloc.pipeline import (
    locate_one,
    locate_run,
    measured_current_spectrum,
    predicted_current_spectrum,
    template_params,
    terminal_condition,
)
from foloc.simkit import simulate, synthesize_linear_window
from foloc.solver import (
    SolverSettings,
    hessian,
    minimize_stage1,
    minimize_stage2,
    objective_gradient,
    prediction_error_pct,
)
from foloc.spectra import CHANNELS, band_mask, frequency_grid, spectral_dataset

FOUR_BUS_SOURCE = "gen2"
TEN_GEN_SOURCES = {"gen3", "gen7"}


def out_of_band_errors(spec, params, S, Vterm, masks):
    """Per-bin prediction errors over all non-DC, unmasked bins."""
    all_bins = np.arange(1, spec.n_bins)
    masked = np.unique(np.concatenate([m.bins for m in masks]))
    bins = np.setdiff1d(all_bins, masked)
    frf = frf_for_params(params, S, Vterm, spec.grid)
    return prediction_error_pct(
        measured_current_spectrum(spec, bins),
        predicted_current_spectrum(spec, frf, bins),
    )


def prior_param_map(gp):
    names = FREE_PARAMS[gp.model_order]
    means, _ = gp.means_vars(names)
    return ParamMap(template=template_params(gp.model_order, dict(zip(names, means))))


@pytest.fixture(scope="module")
def four_bus_runs():
    """Twenty seeded four-machine studies: simulate, then per-generator
    two-stage localization with priors perturbed uniformly by up to 75%."""
    t_start = time.perf_counter()
    seeds = []
    sweep_state = []
    for seed in range(20):
        ds = simulate(four_bus_scenario(seed=seed))
        priors = build_priors(ds.true_params, seed=seed)
        cfg = RunConfig(data_dir="x", priors_path="x", bands=[(0.5, 0.02)], seed=seed)
        norms = {}
        prior_bins, post_bins = [], []
        for gen in sorted(ds.windows):
            win = ds.windows[gen]
            spec = spectral_dataset(
                win, {ch: s**2 for ch, s in ds.noise_std[gen].items()}
            )
            masks = [
                band_mask(spec.grid, 2 * np.pi * f, 2 * np.pi * hw)
                for f, hw in cfg.bands
            ]
            term = terminal_condition(win)
            result, sols = locate_one(gen, spec, priors[gen], masks, term, cfg)
            norms[gen] = result.inj_inf_norm
            pmap = prior_param_map(priors[gen])
            means, _ = priors[gen].means_vars(FREE_PARAMS[priors[gen].model_order])
            prior_bins.append(
                out_of_band_errors(spec, pmap.params_for(pmap.to_opt(means)), *term, masks)
            )
            post_bins.append(
                out_of_band_errors(
                    spec, pmap.params_for(sols["stage1"].theta_g), *term, masks
                )
            )
            if seed == 0:
                prior2 = posterior_update(sols["stage1"].theta_g, 0.5 * sols["stage1"].H)
                sweep_state.append((gen, spec, pmap, prior2, masks, term))
        seeds.append(
            {
                "norms": norms,
                "err_prior": float(np.median(np.concatenate(prior_bins))),
                "err_stage1": float(np.median(np.concatenate(post_bins))),
            }
        )
    return {
        "seeds": seeds,
        "elapsed": time.perf_counter() - t_start,
        "sweep_state": sweep_state,
    }


class TestFourBusSourceSeparation:
    """Three flux-decay machines with AVRs around a noisy infinite bus; a 5%
    torque modulation at 0.5 Hz drives generator 2; 120 s window at 45 dB SNR."""

    def test_source_exceeds_non_sources_100x(self, four_bus_runs):
        hits = 0
        for run in four_bus_runs["seeds"]:
            norms = run["norms"]
            non_source = max(v for g, v in norms.items() if g != FOUR_BUS_SOURCE)
            if norms[FOUR_BUS_SOURCE] >= 100.0 * non_source:
                hits += 1
        assert hits >= 18, f"only {hits}/20 seeds reached 100x separation"

    def test_total_runtime_under_five_minutes(self, four_bus_runs):
        assert four_bus_runs["elapsed"] < 300.0


class TestTenGenTwoSources:
    """Ten flux-decay machines, simultaneous 0.70 Hz torque and 0.86 Hz
    voltage-reference forcing on distinct generators, OU load noise."""

    def test_both_sources_flagged_no_false_positives(self):
        hits = 0
        for seed in range(10):
            ds = simulate(ten_gen_scenario(seed=seed))
            data = LoadedData(
                windows=ds.windows,
                noise_var={
                    g: {ch: s**2 for ch, s in ds.noise_std[g].items()}
                    for g in ds.windows
                },
                fs=ds.fs,
                seed=seed,
            )
            priors = build_priors(ds.true_params, seed=seed)
            cfg = RunConfig(
                data_dir="x", priors_path="x",
                bands=[(0.70, 0.02), (0.86, 0.02)], seed=seed,
            )
            report = locate_run(cfg, data=data, priors=priors)
            norms = {g.gen: g.inj_inf_norm for g in report.generators}
            iota = 10.0 * max(
                v for g, v in norms.items() if g not in TEN_GEN_SOURCES
            )
            flagged = {g for g, v in norms.items() if v > iota}
            if flagged == TEN_GEN_SOURCES:
                hits += 1
        assert hits >= 9, f"only {hits}/10 seeds flagged exactly the true sources"


class TestStageOneReconciliation:
    def test_out_of_band_error_reduced_threefold_every_seed(self, four_bus_runs):
        for seed, run in enumerate(four_bus_runs["seeds"]):
            assert run["err_stage1"] <= run["err_prior"] / 3.0, (
                f"seed {seed}: {run['err_stage1']:.4f} vs prior {run['err_prior']:.4f}"
            )


class TestCovarianceCorrectness:
    def test_every_entry_within_5pct_of_monte_carlo(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        K, draws = 6, 100_000
        N = 2 * K + 1
        grid = frequency_grid(K, 20.0)
        Y = rng.standard_normal((K + 1, 2, 2)) + 1j * rng.standard_normal((K + 1, 2, 2))
        frf = Frf(grid=grid, Y=Y)
        nv = {"V": 1e-4, "theta": 2e-4, "I": 3e-4, "phi": 4e-4}
        bins = np.arange(1, K + 1)
        cov = noise_covariance(frf, nv, K, bins)

        assert np.all(cov.blocks[:, 0, 1] == 0.0)
        assert np.all(cov.blocks[:, 1, 0] == 0.0)
        assert np.all(cov.blocks[:, 2, 3] == 0.0)
        assert np.all(cov.blocks[:, 3, 2] == 0.0)

        eps = {
            ch: np.fft.fft(rng.normal(0, np.sqrt(s2), size=(draws, N)), axis=1)[:, : K + 1]
            for ch, s2 in nv.items()
        }
        Nw = eps["I"] - Y[None, :, 0, 0] * eps["V"] - Y[None, :, 0, 1] * eps["theta"]
        Qw = eps["phi"] - Y[None, :, 1, 0] * eps["V"] - Y[None, :, 1, 1] * eps["theta"]
        for k, b in enumerate(bins):
            comps = np.stack(
                [Nw[:, b].real, Nw[:, b].imag, Qw[:, b].real, Qw[:, b].imag]
            )
            emp = comps @ comps.T / draws
            scale = np.sqrt(np.outer(np.diag(emp), np.diag(emp)))
            assert np.max(np.abs(emp - cov.blocks[k]) / scale) < 0.05
        assert time.perf_counter() - t0 < 60.0


def pipeline_stage1_problem(fluxdecay_params, terminal, seed=0):
    S, Vterm = terminal
    rng = np.random.default_rng(seed)
    K, fs = 40, 20.0
    grid = frequency_grid(K, fs)
    Y = frf_for_params(fluxdecay_params, S, Vterm, grid).Y
    v = 1e-3 * (rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1))
    th = 1e-3 * (rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1))
    v[0] = th[0] = 0.0
    ss = np.array([abs(Vterm), np.angle(Vterm), 0.8, 0.1])
    win = synthesize_linear_window(Y, K, fs, ss, v, th)
    spec = spectral_dataset(win, {ch: 1e-8 for ch in CHANNELS})
    pmap = ParamMap(fluxdecay_params)
    prior = pmap.prior_to_opt(
        fluxdecay_params.free_values(), (0.3 * fluxdecay_params.free_values()) ** 2
    )
    mask = band_mask(spec.grid, spec.grid[10], 1.5 * (spec.grid[1] - spec.grid[0]))
    return assemble("g", "stage1", spec, pmap, prior, [mask], terminal=(S, Vterm))


class TestDerivativeCorrectness:
    def _check_gradient(self, problem, points, rel_tol=1e-5):
        for z in points:
            cov = problem.covariance_fn(z[: problem.prior.mean.size])
            f, g = objective_gradient(problem, z, cov)
            fd = np.empty_like(z)
            for i in range(z.size):
                h = 1e-6 * max(1.0, abs(z[i]))
                zp, zm = z.copy(), z.copy()
                zp[i] += h
                zm[i] -= h
                fp, _ = objective_gradient(problem, zp, cov)
                fm, _ = objective_gradient(problem, zm, cov)
                fd[i] = (fp - fm) / (2 * h)
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(g - fd) / denom < rel_tol

    def _check_hessian(self, problem, points, rel_tol=1e-3):
        for z in points:
            cov = problem.covariance_fn(z[: problem.prior.mean.size])
            H = hessian(problem, z, cov, gauss_newton=False)
            n = z.size
            fd = np.empty((n, n))
            for i in range(n):
                h = 1e-5 * max(1.0, abs(z[i]))
                zp, zm = z.copy(), z.copy()
                zp[i] += h
                zm[i] -= h
                _, gp = objective_gradient(problem, zp, cov)
                _, gm = objective_gradient(problem, zm, cov)
                fd[:, i] = (gp - gm) / (2 * h)
            fd = 0.5 * (fd + fd.T)
            Hnn = H[:n, :n]
            assert np.linalg.norm(Hnn - fd) / np.linalg.norm(fd) < rel_tol

    def test_synthetic_stage1_nonlinear(self, rng):
        problem, _, _, _ = make_problem(rng, m=4, nbins=6, nonlinear=True)
        points = [problem.prior.mean + 0.3 * rng.standard_normal(4) for _ in range(10)]
        self._check_gradient(problem, points)
        self._check_hessian(problem, points)

    def test_synthetic_stage2_with_injections(self, rng):
        problem, _, _, _ = make_problem(
            rng, m=3, nbins=6, stage="stage2", inj_bins=(2, 5), lam=0.7, nonlinear=True
        )
        # decision vector: parameters, injection components, then one slack
        # per injection component (kept positive)
        def point():
            z = rng.standard_normal(problem.dim)
            z[3 + 8:] = 1.0 + np.abs(z[3 + 8:])
            return z

        points = [point() for _ in range(10)]
        self._check_gradient(problem, points)
        self._check_hessian(problem, points)

    def test_pipeline_stage1_gradient(self, fluxdecay_params, terminal, rng):
        problem = pipeline_stage1_problem(fluxdecay_params, terminal)
        points = [
            problem.prior.mean + 0.05 * rng.standard_normal(problem.prior.mean.size)
            for _ in range(10)
        ]
        self._check_gradient(problem, points, rel_tol=1e-5)


class TestOptimizerOracles:
    def test_ridge_closed_form(self, rng):
        problem, cov, A, b = make_problem(rng, m=4, nbins=8)
        sol = minimize_stage1(problem)
        want = ridge_solution(problem, cov, A, b)
        assert np.max(np.abs(sol.theta - want) / np.abs(want)) < 1e-6

    def test_scalar_soft_threshold(self):
        gamma, lam = 0.8, 1.1
        r = np.array([2.0, -0.3, 0.7, -1.8])
        n = r.size
        R0 = np.zeros(4 * n)
        R0[:n] = r
        problem = MapProblem(
            stage="stage2",
            prior=GaussianPrior(np.array([0.7]), np.array([1e-16])),
            lam=lam,
            included_bins=np.arange(1, n + 1),
            inj_bins=np.arange(1, n + 1),
            residual_fn=lambda theta: R0.copy(),
            residual_jac_fn=lambda theta: (R0.copy(), np.zeros((4 * n, 1))),
            covariance_fn=lambda theta: NoiseCovariance(
                bins=np.arange(1, n + 1),
                blocks=gamma * np.eye(4)[None].repeat(n, axis=0),
            ),
            theta0=np.array([0.7]),
        )
        st = SolverSettings(barrier_tol=1e-13, tol_step=1e-14, max_inner=120)
        sol = minimize_stage2(problem, st)
        want = np.sign(r) * np.maximum(np.abs(r) - lam * gamma / 2.0, 0.0)
        assert np.max(np.abs(sol.injections.values[:, 0] - want)) < 1e-8
        assert np.max(np.abs(sol.injections.values[:, 1:])) < 1e-8


class TestSparsityBehavior:
    def test_lambda_sweep_monotone_and_vanishing(self, four_bus_runs):
        iota = 1.0
        counts = []
        lam0s = np.logspace(0.0, 6.0, 10)
        final_inj_max = 0.0
        for lam0 in lam0s:
            n_active = 0
            for gen, spec, pmap, prior2, masks, term in four_bus_runs["sweep_state"]:
                p2 = assemble(
                    gen, "stage2", spec, pmap, prior2, masks,
                    terminal=term, lam0=float(lam0),
                )
                sol = minimize_stage2(p2, SolverSettings())
                norms = np.linalg.norm(sol.injections.values, axis=1)
                n_active += int(np.sum(norms > iota))
                if lam0 == lam0s[-1]:
                    final_inj_max = max(
                        final_inj_max, float(np.max(np.abs(sol.injections.values)))
                    )
            counts.append(n_active)
        assert counts[0] > 0  # the forcing is visible at the default weight
        assert all(a >= b for a, b in zip(counts, counts[1:])), counts
        assert final_inj_max < 1e-9


class TestModelConsistencyNull:
    """Noise-free dataset generated by the linear response model itself with
    exact parameters and no forcing: nothing may be flagged and the residual
    must sit at numerical precision."""

    def _null_run(self, fluxdecay_params):
        import dataclasses

        S, Vterm = 0.8 + 0.25j, 1.02 * np.exp(0.05j)
        Ibar = np.conj(S / Vterm)
        ss = np.array([abs(Vterm), np.angle(Vterm), abs(Ibar), np.angle(Ibar)])
        K, fs = 120, 20.0
        grid = frequency_grid(K, fs)
        windows, nv, priors, truths = {}, {}, {}, {}
        for i, scale in enumerate((1.0, 1.1, 0.9)):
            gen = f"gen{i + 1}"
            p = dataclasses.replace(
                fluxdecay_params,
                H=scale * fluxdecay_params.H, X_q=scale * fluxdecay_params.X_q,
            )
            truths[gen] = p
            rng = np.random.default_rng(100 + i)
            Y = frf_for_params(p, S, Vterm, grid).Y
            v = 1e-3 * (rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1))
            th = 1e-3 * (rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1))
            v[0] = th[0] = 0.0
            windows[gen] = synthesize_linear_window(Y, K, fs, ss, v, th)
            nv[gen] = {ch: 1e-12 for ch in CHANNELS}
            names = FREE_PARAMS["fluxdecay3"]
            priors[gen] = GenPrior(
                "fluxdecay3",
                {n: (getattr(p, n), (0.2 * getattr(p, n)) ** 2) for n in names},
            )
        data = LoadedData(windows=windows, noise_var=nv, fs=fs, seed=0)
        cfg = RunConfig(data_dir="x", priors_path="x", bands=[(0.5, 0.1)], seed=0)
        report = locate_run(cfg, data=data, priors=priors)
        return report, data, truths, cfg, (S, Vterm)

    def test_no_sources_and_residual_at_precision(self, fluxdecay_params):
        report, data, truths, cfg, term = self._null_run(fluxdecay_params)
        assert all(not g.is_source for g in report.generators)
        assert all(g.failure is None for g in report.generators)
        for g in report.generators:
            win = data.windows[g.gen]
            spec = spectral_dataset(win, data.noise_var[g.gen])
            masks = [
                band_mask(spec.grid, 2 * np.pi * f, 2 * np.pi * hw)
                for f, hw in cfg.bands
            ]
            all_bins = np.arange(1, spec.n_bins)
            masked = np.unique(np.concatenate([m.bins for m in masks]))
            bins = np.setdiff1d(all_bins, masked)
            params = template_params("fluxdecay3", g.params_map2)
            frf = frf_for_params(params, *term, spec.grid)
            meas = measured_current_spectrum(spec, bins)
            pred = predicted_current_spectrum(spec, frf, bins)
            rel_rms = np.sqrt(np.mean(np.abs(meas - pred) ** 2))
            rel_rms /= np.sqrt(np.mean(np.abs(meas) ** 2))
            assert rel_rms < 1e-8, f"{g.gen}: relative residual RMS {rel_rms:.2e}"
