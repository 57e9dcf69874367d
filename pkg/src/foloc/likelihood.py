"""Stacked residual vector R, block noise covariance of L, and the likelihood quadratic form.

Residuals are stacked as R = [M_r; M_i; P_r; P_i], each block ordered by the
same included-bin sequence.  The covariance of the stacked noise vector is
block 4x4 per bin (cross-bin correlations vanish), stored and solved in that
form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import Frf
from .errors import GridMismatch, NotPositiveDefinite
from .spectra import DFT_NOISE_CONSTANT_DEFAULT, SpectralDataset, noise_spectral_variance

# Per-bin component order used in covariance blocks.
COMPONENTS = ("N_r", "N_i", "Q_r", "Q_i")


@dataclass
class InjectionVariables:
    """Frequency-domain current injection unknowns on masked bins.

    bins holds grid bin indices (possibly concatenated over several FO bands);
    values has shape (v, 4) with columns (I_Ir, I_Ii, I_phr, I_phi).  The
    flat vector layout groups component-first per band block elsewhere; here
    the per-bin row form is canonical.
    """

    bins: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=int)
        self.values = np.asarray(self.values, dtype=float).reshape(self.bins.size, 4)

    @classmethod
    def zeros(cls, bins) -> "InjectionVariables":
        bins = np.asarray(bins, dtype=int)
        return cls(bins=bins, values=np.zeros((bins.size, 4)))

    @property
    def v(self) -> int:
        return self.bins.size


@dataclass
class NoiseCovariance:
    """Covariance of the stacked noise vector, one 4x4 block per included bin."""

    bins: np.ndarray
    blocks: np.ndarray  # (n, 4, 4)

    @property
    def n(self) -> int:
        return self.bins.size

    def _per_bin(self, R: np.ndarray) -> np.ndarray:
        # [M_r; M_i; P_r; P_i] stacking -> (n, 4) rows per bin
        return np.asarray(R, dtype=float).reshape(4, self.n).T

    def _stack(self, per_bin: np.ndarray) -> np.ndarray:
        return per_bin.T.reshape(-1)

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.blocks)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("noise covariance is not positive definite") from exc

    def solve(self, R: np.ndarray) -> np.ndarray:
        """Gamma^-1 R with the same stacked layout as R."""
        self.cholesky()
        x = np.linalg.solve(self.blocks, self._per_bin(R)[:, :, None])[:, :, 0]
        return self._stack(x)

    def quad(self, R: np.ndarray) -> float:
        """R^T Gamma^-1 R."""
        return float(np.asarray(R) @ self.solve(R))

    def solve_columns(self, Jbin: np.ndarray) -> np.ndarray:
        """Gamma^-1 applied per bin to (n, 4, m) column stacks."""
        return np.linalg.solve(self.blocks, Jbin)

    def logdet(self) -> float:
        L = self.cholesky()
        return 2.0 * float(np.sum(np.log(np.diagonal(L, axis1=1, axis2=2))))

    def to_dense(self) -> np.ndarray:
        n = self.n
        dense = np.zeros((4 * n, 4 * n))
        for k in range(n):
            idx = np.array([k, n + k, 2 * n + k, 3 * n + k])
            dense[np.ix_(idx, idx)] = self.blocks[k]
        return dense


def _select(spec: SpectralDataset, frf: Frf, included_bins):
    if frf.grid.shape != spec.grid.shape or not np.allclose(frf.grid, spec.grid):
        raise GridMismatch("FRF and spectral dataset grids differ")
    b = np.asarray(included_bins, dtype=int)
    return b


def residuals(
    spec: SpectralDataset,
    frf: Frf,
    inj: InjectionVariables | None,
    included_bins,
) -> np.ndarray:
    """Stacked residual vector [M_r; M_i; P_r; P_i] over the included bins.

    Injections are treated as zero on bins outside their mask.
    """
    b = _select(spec, frf, included_bins)
    Vr, Vi = spec.Vt[b].real, spec.Vt[b].imag
    tr, ti = spec.tht[b].real, spec.tht[b].imag
    Ir, Ii = spec.It[b].real, spec.It[b].imag
    pr, pi = spec.pht[b].real, spec.pht[b].imag
    Y = frf.Y[b]
    Y11r, Y11i = Y[:, 0, 0].real, Y[:, 0, 0].imag
    Y12r, Y12i = Y[:, 0, 1].real, Y[:, 0, 1].imag
    Y21r, Y21i = Y[:, 1, 0].real, Y[:, 1, 0].imag
    Y22r, Y22i = Y[:, 1, 1].real, Y[:, 1, 1].imag

    Mr = Ir - Y11r * Vr + Y11i * Vi - Y12r * tr + Y12i * ti
    Mi = Ii - Y11i * Vr - Y11r * Vi - Y12i * tr - Y12r * ti
    Pr = pr - Y21r * Vr + Y21i * Vi - Y22r * tr + Y22i * ti
    Pi = pi - Y21i * Vr - Y21r * Vi - Y22i * tr - Y22r * ti

    if inj is not None and inj.v > 0:
        pos = {bin_: k for k, bin_ in enumerate(b)}
        for row, bin_ in enumerate(inj.bins):
            if bin_ not in pos:
                continue
            k = pos[bin_]
            Mr[k] -= inj.values[row, 0]
            Mi[k] -= inj.values[row, 1]
            Pr[k] -= inj.values[row, 2]
            Pi[k] -= inj.values[row, 3]
    return np.concatenate([Mr, Mi, Pr, Pi])


def noise_covariance(
    frf: Frf,
    noise_var: dict,
    K: int,
    included_bins,
    c: float = DFT_NOISE_CONSTANT_DEFAULT,
) -> NoiseCovariance:
    """Analytic covariance blocks of the stacked noise vector.

    noise_var maps channel ('V','theta','I','phi') to the time-domain
    measurement-noise variance; per-component spectral variances follow from
    the white-noise DFT constant c.
    """
    b = np.asarray(included_bins, dtype=int)
    sV = noise_spectral_variance(noise_var["V"], K, c)
    sT = noise_spectral_variance(noise_var["theta"], K, c)
    sI = noise_spectral_variance(noise_var["I"], K, c)
    sP = noise_spectral_variance(noise_var["phi"], K, c)

    Y = frf.Y[b]
    Y11, Y12, Y21, Y22 = Y[:, 0, 0], Y[:, 0, 1], Y[:, 1, 0], Y[:, 1, 1]

    var_N = sI + np.abs(Y11) ** 2 * sV + np.abs(Y12) ** 2 * sT
    var_Q = sP + np.abs(Y21) ** 2 * sV + np.abs(Y22) ** 2 * sT
    cov_rr = (Y11 * np.conj(Y21)).real * sV + (Y12 * np.conj(Y22)).real * sT
    # E[N_r Q_i] = Im(conj(Y11) Y21) sV + Im(conj(Y12) Y22) sT; E[N_i Q_r] is its negative.
    cov_ri = (np.conj(Y11) * Y21).imag * sV + (np.conj(Y12) * Y22).imag * sT

    n = b.size
    blocks = np.zeros((n, 4, 4))
    blocks[:, 0, 0] = var_N
    blocks[:, 1, 1] = var_N
    blocks[:, 2, 2] = var_Q
    blocks[:, 3, 3] = var_Q
    blocks[:, 0, 2] = blocks[:, 2, 0] = cov_rr
    blocks[:, 1, 3] = blocks[:, 3, 1] = cov_rr
    blocks[:, 0, 3] = blocks[:, 3, 0] = cov_ri
    blocks[:, 1, 2] = blocks[:, 2, 1] = -cov_ri
    return NoiseCovariance(bins=b, blocks=blocks)


def neg_log_likelihood(R: np.ndarray, cov: NoiseCovariance) -> float:
    """Parameter-dependent part of -2 log p_likely (log-det term omitted)."""
    return cov.quad(R)


def dump_covariance_csv(cov: NoiseCovariance, path) -> None:
    """Debug dump of the per-bin covariance blocks."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin"] + [f"{a}x{b}" for a in COMPONENTS for b in COMPONENTS])
        for k, bin_ in enumerate(cov.bins):
            w.writerow([bin_] + [f"{v:.12e}" for v in cov.blocks[k].reshape(-1)])
