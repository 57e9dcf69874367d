"""Ground-truth synthetic data: multi-machine time-domain simulation.

Machines (same models as the dynamics module) are tied in a star to an
infinite bus whose voltage carries band-limited white noise; constant-
admittance loads at the generator buses can carry Ornstein-Uhlenbeck
modulation.  Integration is fixed-step Heun (explicit trapezoidal) for the
drift with Euler-Maruyama-style piecewise-constant stochastic inputs, dt = 1
ms, decimated to the PMU rate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.signal import lfilter

from .dynamics import GeneratorParams, solve_equilibrium
from .errors import ConfigError, IntegrationDiverged
from .network import Branch, Network, newton_power_flow
from .spectra import PmuWindow

CHANNELS = ("V", "theta", "I", "phi")


@dataclass
class FoSpec:
    """One forced oscillation: sinusoidal modulation of a machine input."""

    gen: str
    channel: str  # "torque" | "avr_ref"
    amplitude: float  # relative modulation depth
    freq_hz: float


@dataclass
class OuSpec:
    theta: float  # mean-reversion rate (1/s)
    sigma: float  # stationary std as a fraction of the load


@dataclass
class GenSpec:
    name: str
    params: GeneratorParams
    P: float  # dispatched active power (pu)
    V_set: float = 1.0
    branch_R: float = 0.01
    branch_X: float = 0.15
    load_P: float = 0.0  # constant-admittance load drawn at V_set
    load_Q: float = 0.0
    load_ou: OuSpec | None = None


@dataclass
class SimScenario:
    name: str
    generators: list
    fos: list = field(default_factory=list)
    vinf: float = 1.0
    vinf_noise_std: float = 0.005  # relative, piecewise constant at PMU rate
    pmu_snr_db: float | None = 45.0
    duration: float = 120.0
    dt: float = 1e-3
    fs_pmu: float = 20.0
    seed: int = 0

    def validate(self):
        rec = 1.0 / (self.fs_pmu * self.dt)
        if abs(rec - round(rec)) > 1e-9:
            raise ConfigError("PMU rate must divide the integration rate")
        n_steps = self.duration / self.dt
        if abs(n_steps - round(n_steps)) > 1e-9:
            raise ConfigError("duration must be a multiple of dt")
        n_rec = round(n_steps) // round(rec) + 1
        if n_rec % 2 == 0:
            raise ConfigError("decimated sample count must be odd (2K+1)")
        names = [g.name for g in self.generators]
        if len(set(names)) != len(names):
            raise ConfigError("generator names must be unique")
        nyq = self.fs_pmu / 2.0
        for fo in self.fos:
            if fo.gen not in names:
                raise ConfigError(f"FO target {fo.gen!r} unknown")
            if fo.channel not in ("torque", "avr_ref"):
                raise ConfigError(f"unknown FO channel {fo.channel!r}")
            if not (0.0 < fo.freq_hz < nyq):
                raise ConfigError("FO frequency must lie below the PMU Nyquist")
        for g in self.generators:
            g.params.validate()
            if any(fo.gen == g.name and fo.channel == "avr_ref" for fo in self.fos):
                if g.params.model_order != "fluxdecay3":
                    raise ConfigError("avr_ref FO requires a fluxdecay3 machine")


@dataclass
class LabeledDataset:
    """Noisy PMU windows plus the clean twin and ground-truth labels."""

    windows: dict  # gen -> PmuWindow (noisy)
    clean: dict  # gen -> PmuWindow
    true_params: dict  # gen -> GeneratorParams (as simulated)
    fo_labels: list  # FoSpec list
    noise_std: dict  # gen -> {channel: std}
    fs: float
    seed: int
    rotor_angle_dev: dict = field(default_factory=dict)  # gen -> delta(t) - delta0
    coi_angle_dev: np.ndarray | None = None


@njit(cache=True)
def _rhs(t, k, delta, w, E, xa, model, H, D, Xdp, Xq, Xd, Td0, KA, TA, omega_b,
         tau0, vref0, gbr, bbr, gld, bld, vinf_re, vinf_im, ou,
         tau_amp, tau_om, avr_amp, avr_om,
         dd, dw, dE, dxa, Vm, Th, Im_, Ph):
    n = delta.size
    vr_inf = vinf_re[k]
    vi_inf = vinf_im[k]
    for i in range(n):
        al = delta[i] - np.pi / 2.0
        ca = np.cos(al)
        sa = np.sin(al)
        a = 1.0 / Xdp[i]
        b = 1.0 / Xq[i]
        k1 = ca * sa * (a - b)
        k2 = -(ca * ca * a + sa * sa * b)
        k3 = sa * sa * a + ca * ca * b
        mult = 1.0 + ou[k, i]
        g = gbr[i] + gld[i] * mult
        by = bbr[i] + bld[i] * mult
        rr = gbr[i] * vr_inf - bbr[i] * vi_inf
        ri = bbr[i] * vr_inf + gbr[i] * vi_inf
        Ei = E[i]
        a11 = g - k1
        a12 = -by - k2
        a21 = by - k3
        a22 = g + k1
        c1 = rr + Ei * a * ca
        c2 = ri + Ei * a * sa
        det = a11 * a22 - a12 * a21
        Vr = (c1 * a22 - a12 * c2) / det
        Vi = (a11 * c2 - c1 * a21) / det
        v_d = Vr * ca + Vi * sa
        v_q = Vi * ca - Vr * sa
        i_d = (Ei - v_q) * a
        i_q = v_d * b
        tau_e = Ei * i_q + (Xq[i] - Xdp[i]) * i_d * i_q
        tau_m = tau0[i] * (1.0 + tau_amp[i] * np.sin(tau_om[i] * t))
        dd[i] = omega_b[i] * w[i]
        dw[i] = (tau_m - tau_e - D[i] * w[i]) / (2.0 * H[i])
        vmag = np.sqrt(Vr * Vr + Vi * Vi)
        if model[i] == 1:
            vref = vref0[i] * (1.0 + avr_amp[i] * np.sin(avr_om[i] * t))
            dE[i] = (-E[i] - (Xd[i] - Xdp[i]) * i_d + xa[i]) / Td0[i]
            dxa[i] = (KA[i] * (vref - vmag) - xa[i]) / TA[i]
        else:
            dE[i] = 0.0
            dxa[i] = 0.0
        Vm[i] = vmag
        Th[i] = np.arctan2(Vi, Vr)
        Ir = ca * i_d - sa * i_q
        Ii = sa * i_d + ca * i_q
        Im_[i] = np.sqrt(Ir * Ir + Ii * Ii)
        Ph[i] = np.arctan2(Ii, Ir)


@njit(cache=True)
def _integrate(n_steps, dt, rec_every, delta, w, E, xa, model, H, D, Xdp, Xq, Xd,
               Td0, KA, TA, omega_b, tau0, vref0, gbr, bbr, gld, bld,
               vinf_re, vinf_im, ou, tau_amp, tau_om, avr_amp, avr_om,
               recV, recTh, recI, recPh, recDelta):
    n = delta.size
    dd1 = np.empty(n); dw1 = np.empty(n); dE1 = np.empty(n); dxa1 = np.empty(n)
    dd2 = np.empty(n); dw2 = np.empty(n); dE2 = np.empty(n); dxa2 = np.empty(n)
    Vm = np.empty(n); Th = np.empty(n); Im_ = np.empty(n); Ph = np.empty(n)
    dp = np.empty(n); wp = np.empty(n); Ep = np.empty(n); xap = np.empty(n)
    for k in range(n_steps + 1):
        t = k * dt
        _rhs(t, k, delta, w, E, xa, model, H, D, Xdp, Xq, Xd, Td0, KA, TA,
             omega_b, tau0, vref0, gbr, bbr, gld, bld, vinf_re, vinf_im, ou,
             tau_amp, tau_om, avr_amp, avr_om,
             dd1, dw1, dE1, dxa1, Vm, Th, Im_, Ph)
        if k % rec_every == 0:
            r = k // rec_every
            for i in range(n):
                recV[r, i] = Vm[i]
                recTh[r, i] = Th[i]
                recI[r, i] = Im_[i]
                recPh[r, i] = Ph[i]
                recDelta[r, i] = delta[i]
                if not np.isfinite(Vm[i]) or not np.isfinite(delta[i]):
                    return 1
        if k == n_steps:
            break
        for i in range(n):
            dp[i] = delta[i] + dt * dd1[i]
            wp[i] = w[i] + dt * dw1[i]
            Ep[i] = E[i] + dt * dE1[i]
            xap[i] = xa[i] + dt * dxa1[i]
        _rhs(t + dt, k + 1, dp, wp, Ep, xap, model, H, D, Xdp, Xq, Xd, Td0, KA,
             TA, omega_b, tau0, vref0, gbr, bbr, gld, bld, vinf_re, vinf_im, ou,
             tau_amp, tau_om, avr_amp, avr_om,
             dd2, dw2, dE2, dxa2, Vm, Th, Im_, Ph)
        for i in range(n):
            delta[i] += 0.5 * dt * (dd1[i] + dd2[i])
            w[i] += 0.5 * dt * (dw1[i] + dw2[i])
            E[i] += 0.5 * dt * (dE1[i] + dE2[i])
            xa[i] += 0.5 * dt * (dxa1[i] + dxa2[i])
    return 0


def ou_path(theta: float, sigma: float, dt: float, n: int, rng) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck sample path.

    Euler-Maruyama recursion x_{k+1} = x_k (1 - theta dt) + sigma sqrt(2 theta
    dt) xi_k, run as a first-order IIR filter, started from a stationary draw.
    """
    if not (0.0 < theta * dt < 1.0):
        raise ConfigError("OU rate must satisfy 0 < theta*dt < 1")
    rho = 1.0 - theta * dt
    xi = rng.standard_normal(n)
    x = lfilter([sigma * np.sqrt(2.0 * theta * dt)], [1.0, -rho], xi)
    x0 = rng.normal(0.0, sigma)
    return x + x0 * rho ** np.arange(n)


def _load_admittance(g: GenSpec) -> complex:
    if g.load_P == 0.0 and g.load_Q == 0.0:
        return 0.0 + 0.0j
    return complex(g.load_P, -g.load_Q) / g.V_set**2


def initial_power_flow(scenario: SimScenario) -> np.ndarray:
    """Bus voltages at the dispatch (bus 0 = infinite bus)."""
    n = len(scenario.generators)
    branches = [
        Branch(0, i + 1, g.branch_R, g.branch_X)
        for i, g in enumerate(scenario.generators)
    ]
    shunts = {
        i + 1: _load_admittance(g)
        for i, g in enumerate(scenario.generators)
        if _load_admittance(g) != 0
    }
    net = Network(n_bus=n + 1, branches=branches, shunts=shunts)
    Y = net.ybus()
    pv = {i + 1: (g.P, g.V_set) for i, g in enumerate(scenario.generators)}
    return newton_power_flow(Y, 0, complex(scenario.vinf), pv)


def machine_terminal_conditions(scenario: SimScenario):
    """Per-generator (S, Vterm) machine injections implied by the dispatch."""
    V = initial_power_flow(scenario)
    n = len(scenario.generators)
    branches = [
        Branch(0, i + 1, g.branch_R, g.branch_X)
        for i, g in enumerate(scenario.generators)
    ]
    shunts = {
        i + 1: _load_admittance(g)
        for i, g in enumerate(scenario.generators)
        if _load_admittance(g) != 0
    }
    net = Network(n_bus=n + 1, branches=branches, shunts=shunts)
    Y = net.ybus()
    I_inj = Y @ V
    out = []
    for i in range(n):
        S = V[i + 1] * np.conj(I_inj[i + 1])
        out.append((S, V[i + 1]))
    return out


def simulate(scenario: SimScenario) -> LabeledDataset:
    """Integrate the scenario and return labeled PMU windows (noisy + clean)."""
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)
    n = len(scenario.generators)
    n_steps = round(scenario.duration / scenario.dt)
    rec_every = round(1.0 / (scenario.fs_pmu * scenario.dt))
    n_rec = n_steps // rec_every + 1

    terms = machine_terminal_conditions(scenario)
    model = np.zeros(n, dtype=np.int64)
    H = np.zeros(n); D = np.zeros(n); Xdp = np.zeros(n); Xq = np.zeros(n)
    Xd = np.ones(n); Td0 = np.ones(n); KA = np.ones(n); TA = np.ones(n)
    omega_b = np.zeros(n); tau0 = np.zeros(n); vref0 = np.zeros(n)
    delta = np.zeros(n); w = np.zeros(n); E = np.zeros(n); xa = np.zeros(n)
    gbr = np.zeros(n); bbr = np.zeros(n); gld = np.zeros(n); bld = np.zeros(n)
    true_params = {}
    for i, g in enumerate(scenario.generators):
        p = g.params
        S, Vt = terms[i]
        eq = solve_equilibrium(p, S, Vt)
        if p.model_order == "classical2":
            p = dataclasses.replace(p, Ep=eq.Ep)  # EMF consistent with dispatch
            E[i] = eq.Ep
        else:
            model[i] = 1
            E[i] = eq.x[2]
            xa[i] = eq.x[3]
            Xd[i] = p.X_d
            Td0[i] = p.T_d0p
            KA[i] = p.K_A
            TA[i] = p.T_A
            vref0[i] = eq.V_ref
        true_params[g.name] = p
        H[i], D[i], Xdp[i], Xq[i] = p.H, p.D, p.X_dp, p.X_q
        omega_b[i] = p.omega_b
        tau0[i] = eq.tau_m
        delta[i] = eq.x[0]
        ybr = 1.0 / complex(g.branch_R, g.branch_X)
        gbr[i], bbr[i] = ybr.real, ybr.imag
        yld = _load_admittance(g)
        gld[i], bld[i] = yld.real, yld.imag

    tau_amp = np.zeros(n); tau_om = np.zeros(n)
    avr_amp = np.zeros(n); avr_om = np.zeros(n)
    name_to_i = {g.name: i for i, g in enumerate(scenario.generators)}
    for fo in scenario.fos:
        i = name_to_i[fo.gen]
        if fo.channel == "torque":
            tau_amp[i] = fo.amplitude
            tau_om[i] = 2.0 * np.pi * fo.freq_hz
        else:
            avr_amp[i] = fo.amplitude
            avr_om[i] = 2.0 * np.pi * fo.freq_hz

    # Infinite-bus noise: piecewise constant over each PMU period (band-limited
    # to the PMU Nyquist, so the excitation spectrum is decimation-safe).
    draws = rng.normal(0.0, scenario.vinf_noise_std, size=n_rec)
    noise = np.repeat(draws, rec_every)[: n_steps + 1]
    vinf_t = scenario.vinf * (1.0 + noise)
    vinf_re = vinf_t.astype(float)
    vinf_im = np.zeros(n_steps + 1)

    ou = np.zeros((n_steps + 1, n))
    for i, g in enumerate(scenario.generators):
        if g.load_ou is None or _load_admittance(g) == 0:
            continue
        ou[:, i] = ou_path(g.load_ou.theta, g.load_ou.sigma, scenario.dt, n_steps + 1, rng)

    recV = np.empty((n_rec, n)); recTh = np.empty((n_rec, n))
    recI = np.empty((n_rec, n)); recPh = np.empty((n_rec, n))
    recDelta = np.empty((n_rec, n))
    status = _integrate(
        n_steps, scenario.dt, rec_every, delta, w, E, xa, model, H, D, Xdp, Xq,
        Xd, Td0, KA, TA, omega_b, tau0, vref0, gbr, bbr, gld, bld,
        vinf_re, vinf_im, ou, tau_amp, tau_om, avr_amp, avr_om,
        recV, recTh, recI, recPh, recDelta,
    )
    if status != 0:
        raise IntegrationDiverged(f"non-finite state in scenario {scenario.name!r}")

    clean = {}
    rotor_dev = {}
    for i, g in enumerate(scenario.generators):
        samples = np.column_stack([recV[:, i], recTh[:, i], recI[:, i], recPh[:, i]])
        clean[g.name] = PmuWindow(fs=scenario.fs_pmu, samples=samples)
        rotor_dev[g.name] = recDelta[:, i] - recDelta[0, i]
    Hsum = H.sum()
    coi = sum(H[i] * rotor_dev[g.name] for i, g in enumerate(scenario.generators)) / Hsum

    dataset = LabeledDataset(
        windows={},
        clean=clean,
        true_params=true_params,
        fo_labels=list(scenario.fos),
        noise_std={g.name: {ch: 0.0 for ch in CHANNELS} for g in scenario.generators},
        fs=scenario.fs_pmu,
        seed=scenario.seed,
        rotor_angle_dev=rotor_dev,
        coi_angle_dev=coi,
    )
    return add_pmu_noise(dataset, scenario.pmu_snr_db, rng=rng)


def add_pmu_noise(
    dataset: LabeledDataset, snr_db: float | None, rng=None, seed: int | None = None
) -> LabeledDataset:
    """Add IID Gaussian measurement noise per channel at the requested SNR.

    Angle-channel signal power is computed after subtracting the center-of-
    inertia angle deviation.  snr_db = None (or +inf) returns the clean data.
    """
    if rng is None:
        rng = np.random.default_rng(dataset.seed if seed is None else seed)
    coi = dataset.coi_angle_dev
    for gen, win in dataset.clean.items():
        if snr_db is None or np.isinf(snr_db):
            dataset.windows[gen] = PmuWindow(
                fs=win.fs, samples=win.samples.copy(), steady_state=win.steady_state.copy()
            )
            dataset.noise_std[gen] = {ch: 0.0 for ch in CHANNELS}
            continue
        dev = win.samples - win.samples.mean(axis=0)
        stds = {}
        noisy = win.samples.copy()
        for j, ch in enumerate(CHANNELS):
            sig = dev[:, j]
            if ch in ("theta", "phi") and coi is not None:
                ref = coi - coi.mean()
                sig = sig - ref
            power = float(np.mean(sig**2))
            std = np.sqrt(power * 10.0 ** (-snr_db / 10.0))
            stds[ch] = std
            noisy[:, j] += rng.normal(0.0, std, size=noisy.shape[0])
        dataset.windows[gen] = PmuWindow(fs=win.fs, samples=noisy)
        dataset.noise_std[gen] = stds
    return dataset


def synthesize_linear_window(
    Y: np.ndarray,
    K: int,
    fs: float,
    steady_state: np.ndarray,
    v_coeffs: np.ndarray,
    th_coeffs: np.ndarray,
    inj_coeffs: np.ndarray | None = None,
) -> PmuWindow:
    """Exact linear-response multisine window: current follows the FRF.

    Y has shape (K+1, 2, 2); v_coeffs/th_coeffs are complex per-bin voltage
    deviation DFT coefficients (bin w carries N * coeff in the DFT, N = 2K+1).
    inj_coeffs, if given, has shape (K+1, 2) and adds a current-spectrum
    offset (a frequency-domain injection).  The result satisfies
    [I~, phi~] = Y [V~, th~] + N*inj exactly up to rounding.
    """
    N = 2 * K + 1
    n_arr = np.arange(N)
    w = np.arange(K + 1)
    phase = np.exp(2j * np.pi * np.outer(w, n_arr) / N)  # (K+1, N)
    phase[0] = 0.0  # no DC deviation content
    vin = np.stack([v_coeffs, th_coeffs], axis=1)  # (K+1, 2)
    out = np.einsum("wij,wj->wi", Y, vin)
    if inj_coeffs is not None:
        out = out + np.asarray(inj_coeffs)
    dV = 2.0 * np.real(v_coeffs @ phase)
    dth = 2.0 * np.real(th_coeffs @ phase)
    dI = 2.0 * np.real(out[:, 0] @ phase)
    dph = 2.0 * np.real(out[:, 1] @ phase)
    samples = np.asarray(steady_state, dtype=float)[None, :] + np.column_stack(
        [dV, dth, dI, dph]
    )
    return PmuWindow(fs=fs, samples=samples, steady_state=np.asarray(steady_state, float))


def perturb_params(
    truth: GeneratorParams, pct_range=(-75.0, 75.0), seed: int | None = None, rng=None
) -> dict:
    """Prior means: each parameter scaled by (1 + u/100), u ~ U(pct_range).

    Covers the free parameters of the model plus E' for classical machines.
    """
    lo, hi = pct_range
    if lo <= -100.0:
        raise ConfigError("perturbation range must keep parameters positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    names = list(truth.free_names())
    if truth.model_order == "classical2":
        names.append("Ep")
    means = {}
    for name in names:
        u = rng.uniform(lo, hi)
        means[name] = getattr(truth, name) * (1.0 + u / 100.0)
    return means
