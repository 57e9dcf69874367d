"""File formats: scenario JSON, priors JSON, run config, PMU CSV datasets.

PMU CSVs carry one generator each with header ``t,V,theta,I,phi`` (seconds,
pu, rad, pu, rad).  A dataset directory holds one CSV per generator plus
``meta.json`` (sample rate, seed, per-channel noise stds) and ``labels.json``
(ground-truth parameters and forcing labels) when simulated.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dynamics import GeneratorParams
from .errors import ConfigError
from .simkit import FoSpec, GenSpec, LabeledDataset, OuSpec, SimScenario
from .spectra import CHANNELS, PmuWindow

_PARAM_FIELDS = (
    "model_order", "H", "D", "X_dp", "X_q", "X_d", "T_d0p", "K_A", "T_A",
    "Ep", "f_base",
)


def _params_from_dict(d: dict) -> GeneratorParams:
    unknown = set(d) - set(_PARAM_FIELDS)
    if unknown:
        raise ConfigError(f"unknown generator parameter fields {sorted(unknown)}")
    if "model_order" not in d:
        raise ConfigError("generator params need model_order")
    return GeneratorParams(**d)


def _params_to_dict(p: GeneratorParams) -> dict:
    out = {}
    for name in _PARAM_FIELDS:
        val = getattr(p, name)
        if val is not None:
            out[name] = val
    return out


def scenario_from_json(path) -> SimScenario:
    """Parse a simulation scenario file."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    try:
        gens = []
        for g in d["generators"]:
            ou = g.get("load_ou")
            gens.append(
                GenSpec(
                    name=g["name"],
                    params=_params_from_dict(g["params"]),
                    P=g["P"],
                    V_set=g.get("V_set", 1.0),
                    branch_R=g.get("branch_R", 0.01),
                    branch_X=g.get("branch_X", 0.15),
                    load_P=g.get("load_P", 0.0),
                    load_Q=g.get("load_Q", 0.0),
                    load_ou=OuSpec(theta=ou["theta"], sigma=ou["sigma"]) if ou else None,
                )
            )
        fos = [
            FoSpec(
                gen=f["gen"],
                channel=f["channel"],
                amplitude=f["amplitude"],
                freq_hz=f["freq_hz"],
            )
            for f in d.get("fos", [])
        ]
        scen = SimScenario(
            name=d.get("name", os.path.basename(str(path))),
            generators=gens,
            fos=fos,
            vinf=d.get("vinf", 1.0),
            vinf_noise_std=d.get("vinf_noise_std", 0.005),
            pmu_snr_db=d.get("pmu_snr_db", 45.0),
            duration=d.get("duration", 120.0),
            dt=d.get("dt", 1e-3),
            fs_pmu=d.get("fs_pmu", 20.0),
            seed=d.get("seed", 0),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario {path}: {exc}") from exc
    scen.validate()
    return scen


def scenario_to_json(scen: SimScenario, path) -> None:
    d = {
        "name": scen.name,
        "vinf": scen.vinf,
        "vinf_noise_std": scen.vinf_noise_std,
        "pmu_snr_db": scen.pmu_snr_db,
        "duration": scen.duration,
        "dt": scen.dt,
        "fs_pmu": scen.fs_pmu,
        "seed": scen.seed,
        "generators": [
            {
                "name": g.name,
                "params": _params_to_dict(g.params),
                "P": g.P,
                "V_set": g.V_set,
                "branch_R": g.branch_R,
                "branch_X": g.branch_X,
                "load_P": g.load_P,
                "load_Q": g.load_Q,
                **(
                    {"load_ou": {"theta": g.load_ou.theta, "sigma": g.load_ou.sigma}}
                    if g.load_ou
                    else {}
                ),
            }
            for g in scen.generators
        ],
        "fos": [
            {
                "gen": f.gen,
                "channel": f.channel,
                "amplitude": f.amplitude,
                "freq_hz": f.freq_hz,
            }
            for f in scen.fos
        ],
    }
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class GenPrior:
    """Parameter priors for one generator: name -> (mean, variance)."""

    model_order: str
    entries: dict

    def means_vars(self, names) -> tuple[np.ndarray, np.ndarray]:
        missing = [n for n in names if n not in self.entries]
        if missing:
            raise ConfigError(f"prior missing parameters {missing}")
        m = np.array([self.entries[n][0] for n in names], dtype=float)
        v = np.array([self.entries[n][1] for n in names], dtype=float)
        return m, v


def priors_from_json(path) -> dict:
    """Parse a priors file: {gen: {model_order, params: {name: [mean, var]}}}."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read priors {path}: {exc}") from exc
    out = {}
    try:
        for gen, spec in d.items():
            entries = {
                name: (float(mv[0]), float(mv[1]))
                for name, mv in spec["params"].items()
            }
            out[gen] = GenPrior(model_order=spec["model_order"], entries=entries)
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ConfigError(f"malformed priors {path}: {exc}") from exc
    for gen, gp in out.items():
        for name, (mean, var) in gp.entries.items():
            if var <= 0:
                raise ConfigError(f"prior variance for {gen}.{name} must be positive")
    return out


def priors_to_json(priors: dict, path) -> None:
    d = {
        gen: {
            "model_order": gp.model_order,
            "params": {n: [mv[0], mv[1]] for n, mv in gp.entries.items()},
        }
        for gen, gp in priors.items()
    }
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunConfig:
    """Localization run configuration."""

    data_dir: str
    priors_path: str
    bands: list  # [(freq_hz, half_width_hz), ...]
    lambda0: float = 1.0
    iota: float = 1.0
    dft_constant: float = 0.5
    gauss_newton: bool = True
    stage: str = "both"  # "1" | "2" | "both"
    seed: int | None = None
    out: str | None = None

    def validate(self):
        if self.stage not in ("1", "2", "both"):
            raise ConfigError(f"stage must be '1', '2' or 'both', got {self.stage!r}")
        if not self.bands:
            raise ConfigError("at least one FO band is required")
        for f_hz, hw_hz in self.bands:
            if f_hz <= 0 or hw_hz <= 0:
                raise ConfigError("band center and half-width must be positive")
        if self.lambda0 < 0:
            raise ConfigError("lambda0 must be nonnegative")
        if self.iota < 0:
            raise ConfigError("iota must be nonnegative")
        if self.dft_constant <= 0:
            raise ConfigError("DFT noise constant must be positive")


def run_config_from_json(path) -> RunConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    try:
        base = os.path.dirname(os.path.abspath(str(path)))

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base, p)

        cfg = RunConfig(
            data_dir=resolve(d["data_dir"]),
            priors_path=resolve(d["priors"]),
            bands=[(b["freq_hz"], b["half_width_hz"]) for b in d["bands"]],
            lambda0=d.get("lambda0", 1.0),
            iota=d.get("iota", 1.0),
            dft_constant=d.get("dft_constant", 0.5),
            gauss_newton=d.get("gauss_newton", True),
            stage=str(d.get("stage", "both")),
            seed=d.get("seed"),
            out=resolve(d["out"]) if d.get("out") else None,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed run config {path}: {exc}") from exc
    cfg.validate()
    return cfg


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_dataset(dataset: LabeledDataset, out_dir) -> list:
    """Write per-generator PMU CSVs plus meta.json and labels.json.

    Returns the list of paths written.  Output is byte-deterministic for a
    fixed dataset.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for gen in sorted(dataset.windows):
        win = dataset.windows[gen]
        path = os.path.join(out_dir, f"{gen}.csv")
        t = np.arange(win.n_samples) / win.fs
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "V", "theta", "I", "phi"])
            for k in range(win.n_samples):
                w.writerow([_fmt(t[k])] + [_fmt(v) for v in win.samples[k]])
        written.append(path)
    meta = {
        "fs": dataset.fs,
        "seed": dataset.seed,
        "generators": sorted(dataset.windows),
        "noise_std": {
            g: {ch: dataset.noise_std[g][ch] for ch in CHANNELS}
            for g in sorted(dataset.noise_std)
        },
    }
    meta_path = os.path.join(out_dir, "meta.json")
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(meta_path)
    labels = {
        "fos": [
            {
                "gen": f.gen,
                "channel": f.channel,
                "amplitude": f.amplitude,
                "freq_hz": f.freq_hz,
            }
            for f in dataset.fo_labels
        ],
        "true_params": {
            g: _params_to_dict(p) for g, p in sorted(dataset.true_params.items())
        },
    }
    labels_path = os.path.join(out_dir, "labels.json")
    with open(labels_path, "w") as fh:
        json.dump(labels, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(labels_path)
    return written


@dataclass
class LoadedData:
    """Windows plus metadata read back from a dataset directory."""

    windows: dict  # gen -> PmuWindow
    noise_var: dict  # gen -> {channel: variance}
    fs: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)


def read_dataset(data_dir) -> LoadedData:
    meta_path = os.path.join(data_dir, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {meta_path}: {exc}") from exc
    try:
        fs = float(meta["fs"])
        gens = list(meta["generators"])
        noise_std = meta["noise_std"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed meta.json: {exc}") from exc
    windows = {}
    noise_var = {}
    for gen in gens:
        path = os.path.join(data_dir, f"{gen}.csv")
        windows[gen] = read_pmu_csv(path, fs)
        try:
            noise_var[gen] = {ch: float(noise_std[gen][ch]) ** 2 for ch in CHANNELS}
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed noise_std for {gen}: {exc}") from exc
    return LoadedData(
        windows=windows, noise_var=noise_var, fs=fs, seed=meta.get("seed"), meta=meta
    )


def read_pmu_csv(path, fs: float) -> PmuWindow:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["t", "V", "theta", "I", "phi"]:
        raise ConfigError(f"{path}: expected header t,V,theta,I,phi")
    try:
        data = np.array([[float(v) for v in row[1:5]] for row in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed row: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 4 or data.shape[0] < 3:
        raise ConfigError(f"{path}: need at least 3 samples of 4 channels")
    return PmuWindow(fs=fs, samples=data)
