"""DFT harmonic averaging and its covariance-kernel counterpart.

With the covariance kernel ``k(x, y) = <F(x), F(y)>`` the sampled operator has
rank at most ``m`` and its eigenpairs come from the thin SVD of the data
matrix. In that basis the harmonic-average power and the RKHS norm share the
same coefficients and differ only in weighting: power multiplies by each
eigenvalue, the RKHS norm divides by it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .rkhs import FrequencyGrid

RANK_RTOL = 1e-10


def _series(series) -> np.ndarray:
    arr = np.asarray(series)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"series must be 1-d or 2-d, got shape {arr.shape}")
    return arr


def _shifted_dft(a: np.ndarray) -> np.ndarray:
    b = scipy.fft.fft(a, axis=0)
    b /= a.shape[0]
    return scipy.fft.fftshift(b, axes=0)


@dataclass(frozen=True)
class PowerSpectrum:
    """``power[r] = ||(1/N) sum_n exp(-i omega_r n dt) F(x_n)||^2`` on the DFT grid."""

    grid: FrequencyGrid
    power: np.ndarray

    @property
    def omegas(self) -> np.ndarray:
        return self.grid.omegas


def harmonic_average(series, grid: FrequencyGrid) -> PowerSpectrum:
    y = _series(series)
    if y.shape[0] != grid.n:
        raise ValueError(f"series has {y.shape[0]} samples but grid has {grid.n}")
    b = _shifted_dft(y)
    power = np.sum(b.real**2 + b.imag**2, axis=1)
    return PowerSpectrum(grid=grid, power=power)


@dataclass(frozen=True)
class CovarianceNorms:
    """Covariance-kernel eigenbasis and the two spectra built from it.

    Attributes
    ----------
    lambdas
        The ``rank`` nonzero eigenvalues (squared singular values).
    phi
        Eigenfunctions at the samples, unit norm in the empirical inner product.
    coeff_power
        ``|<phi_j, f_r>|^2`` per grid row and eigenfunction.
    rkhs_norm_sq
        ``sum_j |<phi_j, f_r>|^2 / lambda_j``.
    power
        ``sum_j |<phi_j, f_r>|^2 lambda_j``, equal to the harmonic-average power.
    """

    grid: FrequencyGrid
    lambdas: np.ndarray
    phi: np.ndarray
    coeff_power: np.ndarray
    rkhs_norm_sq: np.ndarray
    power: np.ndarray

    @property
    def rank(self) -> int:
        return self.lambdas.shape[0]

    @property
    def omegas(self) -> np.ndarray:
        return self.grid.omegas


def covariance_rkhs_norms(series, grid: FrequencyGrid) -> CovarianceNorms:
    y = _series(series)
    n = y.shape[0]
    if n != grid.n:
        raise ValueError(f"series has {n} samples but grid has {grid.n}")
    u, s, _ = np.linalg.svd(y / np.sqrt(n), full_matrices=False)
    if s.size == 0 or not s[0] > 0:
        raise ValueError("series is identically zero; covariance kernel has rank 0")
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0]))
    lambdas = s[:rank] ** 2
    phi = u[:, :rank] * np.sqrt(n)
    b = _shifted_dft(phi)
    coeff_power = b.real**2 + b.imag**2
    return CovarianceNorms(
        grid=grid, lambdas=lambdas, phi=phi, coeff_power=coeff_power,
        rkhs_norm_sq=coeff_power @ (1.0 / lambdas), power=coeff_power @ lambdas,
    )


def spectral_peaks(omegas: np.ndarray, power: np.ndarray, count: int = 2,
                   min_omega: float = 0.0) -> np.ndarray:
    """Frequencies of the ``count`` largest local maxima with ``omega > min_omega``."""
    idx = np.flatnonzero(omegas > min_omega)
    if idx.size < 3:
        return omegas[idx[np.argsort(power[idx])[::-1][:count]]]
    p = power[idx]
    interior = (p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])
    peaks = idx[1:-1][interior]
    order = np.argsort(power[peaks], kind="stable")[::-1]
    return omegas[peaks[order[:count]]]


def write_power_csv(path, spectrum: PowerSpectrum) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["omega", "power"])
        for om, p in zip(spectrum.omegas, spectrum.power):
            writer.writerow([f"{om:.17g}", f"{p:.17g}"])


def write_covariance_csv(path, norms: CovarianceNorms) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["omega", "rkhs_norm_sq", "power"])
        for om, w, p in zip(norms.omegas, norms.rkhs_norm_sq, norms.power):
            writer.writerow([f"{om:.17g}", f"{w:.17g}", f"{p:.17g}"])
