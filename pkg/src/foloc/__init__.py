"""foloc: locate forced-oscillation source generators from terminal PMU spectra.

Each generator is scored independently: a frequency response function maps
terminal voltage deviation spectra to current deviation spectra, a two-stage
Bayesian MAP fit refines uncertain machine parameters from out-of-band bins,
and sparse frequency-domain current injections on the oscillation band decide
whether the forcing originates behind that terminal.
"""

from .bayes import (
    GaussianPrior,
    LaplacePrior,
    MapProblem,
    ParamMap,
    assemble,
    default_lambda,
    posterior_update,
)
from .config import RunConfig, read_dataset, write_dataset
from .dynamics import Frf, GeneratorParams, frf, frf_for_params, linearize, solve_equilibrium
from .errors import FolocError
from .likelihood import InjectionVariables, NoiseCovariance, noise_covariance, residuals
from .pipeline import locate_run
from .report import GeneratorResult, SourceReport
from .simkit import LabeledDataset, SimScenario, add_pmu_noise, perturb_params, simulate
from .solver import MapSolution, SolverSettings, minimize_stage1, minimize_stage2
from .spectra import BandMask, PmuWindow, SpectralDataset, band_mask, spectral_dataset

__version__ = "0.1.0"

__all__ = [
    "BandMask", "Frf", "FolocError", "GaussianPrior", "GeneratorParams",
    "GeneratorResult", "InjectionVariables", "LabeledDataset", "LaplacePrior",
    "MapProblem", "MapSolution", "NoiseCovariance", "ParamMap", "PmuWindow",
    "RunConfig", "SimScenario", "SolverSettings", "SourceReport",
    "SpectralDataset", "add_pmu_noise", "assemble", "band_mask",
    "default_lambda", "frf", "frf_for_params", "linearize", "locate_run",
    "minimize_stage1", "minimize_stage2", "noise_covariance", "perturb_params",
    "posterior_update", "read_dataset", "residuals", "simulate",
    "solve_equilibrium", "spectral_dataset", "write_dataset",
]
