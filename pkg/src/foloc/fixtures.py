"""Built-in study systems: a 4-bus classical case and a 10-generator case."""

from __future__ import annotations

import numpy as np

from .config import GenPrior
from .dynamics import FREE_PARAMS, GeneratorParams
from .simkit import FoSpec, GenSpec, OuSpec, SimScenario, perturb_params

_OU = OuSpec(theta=1.0, sigma=0.01)


def four_bus_scenario(
    seed: int = 0,
    fo_gen: str = "gen2",
    fo_freq_hz: float = 0.5,
    fo_amplitude: float = 0.05,
    duration: float = 120.0,
    pmu_snr_db: float | None = 45.0,
) -> SimScenario:
    """Three 3rd-order machines with AVRs in a star around an infinite bus.

    A sinusoidal mechanical-torque modulation drives the named generator;
    pass fo_amplitude=0 for the unforced (ambient-only) case.
    """
    gens = [
        GenSpec(
            name="gen1",
            params=GeneratorParams(
                "fluxdecay3", H=3.5, D=1.0, X_dp=0.25, X_q=0.85,
                X_d=1.35, T_d0p=6.0, K_A=30.0, T_A=0.06,
            ),
            P=0.8, V_set=1.02, branch_R=0.01, branch_X=0.15,
            load_P=0.35, load_Q=0.10, load_ou=_OU,
        ),
        GenSpec(
            name="gen2",
            params=GeneratorParams(
                "fluxdecay3", H=4.2, D=1.3, X_dp=0.22, X_q=0.75,
                X_d=1.20, T_d0p=5.2, K_A=25.0, T_A=0.05,
            ),
            P=0.7, V_set=1.01, branch_R=0.012, branch_X=0.18,
            load_P=0.30, load_Q=0.08, load_ou=_OU,
        ),
        GenSpec(
            name="gen3",
            params=GeneratorParams(
                "fluxdecay3", H=5.1, D=0.9, X_dp=0.28, X_q=0.95,
                X_d=1.50, T_d0p=7.0, K_A=35.0, T_A=0.07,
            ),
            P=0.6, V_set=1.00, branch_R=0.008, branch_X=0.12,
            load_P=0.25, load_Q=0.06, load_ou=_OU,
        ),
    ]
    fos = []
    if fo_amplitude > 0:
        fos.append(FoSpec(gen=fo_gen, channel="torque", amplitude=fo_amplitude, freq_hz=fo_freq_hz))
    return SimScenario(
        name="four_bus",
        generators=gens,
        fos=fos,
        pmu_snr_db=pmu_snr_db,
        duration=duration,
        seed=seed,
    )


def ten_gen_scenario(
    seed: int = 0,
    fo_specs: list | None = None,
    duration: float = 120.0,
    pmu_snr_db: float | None = 45.0,
) -> SimScenario:
    """Ten flux-decay machines with AVRs in a star around an infinite bus.

    The default forcing is two simultaneous FOs: a torque modulation at
    0.70 Hz on gen3 and a voltage-reference modulation at 0.86 Hz on gen7.
    """
    base = [
        # (H, D, X_d, X_dp, X_q, T_d0p, K_A, T_A, P, V_set, bR, bX, lP, lQ)
        (4.0, 1.2, 1.40, 0.25, 0.90, 6.0, 30.0, 0.06, 0.75, 1.02, 0.010, 0.16, 0.30, 0.08),
        (3.4, 1.0, 1.25, 0.22, 0.80, 5.4, 25.0, 0.05, 0.65, 1.01, 0.012, 0.20, 0.25, 0.06),
        (5.2, 1.5, 1.55, 0.28, 1.00, 7.0, 35.0, 0.07, 0.85, 1.02, 0.008, 0.14, 0.35, 0.10),
        (4.6, 1.1, 1.35, 0.24, 0.85, 6.4, 28.0, 0.06, 0.70, 1.00, 0.011, 0.18, 0.28, 0.07),
        (3.8, 1.3, 1.20, 0.21, 0.75, 5.0, 22.0, 0.05, 0.60, 1.01, 0.013, 0.22, 0.22, 0.05),
        (5.6, 1.6, 1.60, 0.30, 1.05, 7.5, 38.0, 0.08, 0.90, 1.03, 0.007, 0.13, 0.38, 0.11),
        (4.3, 1.2, 1.45, 0.26, 0.92, 6.2, 32.0, 0.06, 0.72, 1.01, 0.010, 0.17, 0.30, 0.08),
        (3.6, 0.9, 1.30, 0.23, 0.82, 5.8, 26.0, 0.05, 0.62, 1.00, 0.012, 0.19, 0.24, 0.06),
        (4.9, 1.4, 1.50, 0.27, 0.95, 6.8, 34.0, 0.07, 0.80, 1.02, 0.009, 0.15, 0.33, 0.09),
        (4.1, 1.1, 1.38, 0.24, 0.88, 6.1, 29.0, 0.06, 0.68, 1.01, 0.011, 0.18, 0.27, 0.07),
    ]
    gens = []
    for i, row in enumerate(base):
        H, D, Xd, Xdp, Xq, Td0, KA, TA, P, Vs, bR, bX, lP, lQ = row
        gens.append(
            GenSpec(
                name=f"gen{i + 1}",
                params=GeneratorParams(
                    "fluxdecay3", H=H, D=D, X_dp=Xdp, X_q=Xq,
                    X_d=Xd, T_d0p=Td0, K_A=KA, T_A=TA,
                ),
                P=P, V_set=Vs, branch_R=bR, branch_X=bX,
                load_P=lP, load_Q=lQ, load_ou=_OU,
            )
        )
    if fo_specs is None:
        fo_specs = [
            FoSpec(gen="gen3", channel="torque", amplitude=0.05, freq_hz=0.70),
            FoSpec(gen="gen7", channel="avr_ref", amplitude=0.01, freq_hz=0.86),
        ]
    return SimScenario(
        name="ten_gen",
        generators=gens,
        fos=list(fo_specs),
        pmu_snr_db=pmu_snr_db,
        duration=duration,
        seed=seed,
    )


def build_priors(
    true_params: dict,
    seed: int = 0,
    pct_range=(-75.0, 75.0),
    rel_std: float = 0.5,
) -> dict:
    """Perturbed priors around the truth: mean = truth * (1 + U(pct)/100),
    std = rel_std * |mean|.  Returns {gen: GenPrior}."""
    rng = np.random.default_rng(seed)
    priors = {}
    for gen in sorted(true_params):
        p = true_params[gen]
        means = perturb_params(p, pct_range=pct_range, rng=rng)
        entries = {}
        for name in list(FREE_PARAMS[p.model_order]) + (
            ["Ep"] if p.model_order == "classical2" else []
        ):
            m = means[name]
            entries[name] = (m, (rel_std * abs(m)) ** 2)
        priors[gen] = GenPrior(model_order=p.model_order, entries=entries)
    return priors
