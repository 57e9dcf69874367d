"""Source report structures and (de)serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class GeneratorResult:
    """Per-generator outcome of the two-stage run."""

    gen: str
    params_map2: dict
    inj_bins: list
    inj_freqs_hz: list
    inj_norms: list
    inj_inf_norm: float
    is_source: bool
    converged_stage1: bool = True
    converged_stage2: bool = True
    failure: str | None = None
    pred_error_prior_median: float | None = None
    pred_error_stage1_median: float | None = None

    def to_dict(self) -> dict:
        return {
            "gen": self.gen,
            "params_map2": self.params_map2,
            "inj_bins": [int(b) for b in self.inj_bins],
            "inj_freqs_hz": [float(f) for f in self.inj_freqs_hz],
            "inj_norms": [float(x) for x in self.inj_norms],
            "inj_inf_norm": float(self.inj_inf_norm),
            "is_source": bool(self.is_source),
            "converged_stage1": bool(self.converged_stage1),
            "converged_stage2": bool(self.converged_stage2),
            "failure": self.failure,
            "pred_error_prior_median": self.pred_error_prior_median,
            "pred_error_stage1_median": self.pred_error_stage1_median,
        }


@dataclass
class SourceReport:
    """Verdict per generator plus run-level metadata."""

    generators: list
    iota: float
    lam: dict
    seed: int | None = None
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def flagged(self) -> list:
        hits = [g for g in self.generators if g.is_source]
        return sorted(hits, key=lambda g: -g.inj_inf_norm)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "iota": float(self.iota),
            "lam": {k: float(v) for k, v in self.lam.items()},
            "seed": self.seed,
            "generators": [g.to_dict() for g in self.generators],
            "timings": self.timings,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "SourceReport":
        try:
            gens = [
                GeneratorResult(
                    gen=g["gen"],
                    params_map2=g["params_map2"],
                    inj_bins=g["inj_bins"],
                    inj_freqs_hz=g["inj_freqs_hz"],
                    inj_norms=g["inj_norms"],
                    inj_inf_norm=g["inj_inf_norm"],
                    is_source=g["is_source"],
                    converged_stage1=g.get("converged_stage1", True),
                    converged_stage2=g.get("converged_stage2", True),
                    failure=g.get("failure"),
                    pred_error_prior_median=g.get("pred_error_prior_median"),
                    pred_error_stage1_median=g.get("pred_error_stage1_median"),
                )
                for g in d["generators"]
            ]
            return cls(
                generators=gens,
                iota=d["iota"],
                lam=d["lam"],
                seed=d.get("seed"),
                timings=d.get("timings", {}),
                schema_version=d.get("schema_version", SCHEMA_VERSION),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed report: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "SourceReport":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed report JSON: {exc}") from exc
        return cls.from_dict(d)

    def render(self) -> str:
        """Human-readable summary table."""
        lines = []
        lines.append(f"source report (schema v{self.schema_version})")
        lines.append(f"iota threshold: {self.iota:.6g}")
        header = f"{'generator':<14} {'||I||_inf':>14} {'source':>8} {'stage1':>8} {'stage2':>8}"
        lines.append(header)
        lines.append("-" * len(header))
        for g in sorted(self.generators, key=lambda g: -g.inj_inf_norm):
            lines.append(
                f"{g.gen:<14} {g.inj_inf_norm:>14.6g} {str(g.is_source):>8}"
                f" {('ok' if g.converged_stage1 else 'FAIL'):>8}"
                f" {('ok' if g.converged_stage2 else 'FAIL'):>8}"
            )
        hits = self.flagged()
        if hits:
            for g in hits:
                k = int(np.argmax(g.inj_norms)) if g.inj_norms else 0
                f_hz = g.inj_freqs_hz[k] if g.inj_freqs_hz else float("nan")
                lines.append(f"source found at generator {g.gen} ({f_hz:.3f} Hz)")
        else:
            lines.append("no source found")
        return "\n".join(lines)
