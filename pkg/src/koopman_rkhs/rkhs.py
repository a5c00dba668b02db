"""Truncated RKHS norms of Fourier functions and Nystrom extensions.

For a trial frequency ``omega`` the Fourier function ``f(n) = exp(i omega n dt)``
is expanded in the kernel eigenbasis,
``a_j = <phi_j, f> = (1/N) sum_n conj(phi_j(x_n)) f(n)``, and the squared RKHS
norm of its extension, truncated to ``l`` eigenfunctions, is

    w_l(f) = sum_{j<l} |a_j|^2 / lambda_j.

On the DFT grid all ``a_j`` come out of one FFT per eigenfunction.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft

from .eigensolve import SpectralBasis
from .kernel import GramOperator, _row_blocks


@dataclass(frozen=True)
class FrequencyGrid:
    """DFT frequencies ``2 pi r / (N dt)``.

    ``r`` runs over ``-(N-1)/2 .. (N-1)/2`` for odd ``N`` and ``-N/2 .. N/2-1``
    for even ``N`` (the standard shifted FFT layout).
    """

    n: int
    dt: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"grid needs at least one sample, got n={self.n}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.n) - self.n // 2

    @property
    def omegas(self) -> np.ndarray:
        return 2.0 * np.pi * self.indices / (self.n * self.dt)

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / (self.n * self.dt)

    @property
    def nyquist(self) -> float:
        return np.pi / self.dt

    def __len__(self) -> int:
        return self.n

    def nearest(self, omega: float) -> int:
        """Row index of the grid frequency closest to ``omega``."""
        r = int(round(omega / self.spacing))
        return int(np.clip(r + self.n // 2, 0, self.n - 1))


def fourier_function(omega: float, n: int, dt: float) -> np.ndarray:
    """Samples ``exp(i omega k dt)``, ``k = 0..n-1``, of the Fourier function."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    step = math.remainder(omega * dt, 2.0 * math.pi)
    return np.exp(1j * step * np.arange(n))


def _inverse_sqrt_lambdas(basis: SpectralBasis, l: int) -> np.ndarray:
    lam = basis.lambdas[:l]
    out = np.zeros(l)
    ok = lam > basis.floor
    out[ok] = 1.0 / np.sqrt(lam[ok])
    return out


def coeffs_fft(basis: SpectralBasis, grid: FrequencyGrid, l: int | None = None) -> np.ndarray:
    """Matrix with rows indexed by grid frequency and columns by eigenfunction.

    Column ``j`` is the DFT ``b_r = (1/N) sum_n exp(-2 pi i n r / N) a_n`` of
    ``a_n = lambda_j^{-1/2} phi_j(x_n)``, rows in grid order. Its entries are
    ``conj(<phi_j, f_r>) / sqrt(lambda_j)``, so the squared row norm truncated
    to ``l`` columns is ``w_l``. Columns whose eigenvalue is at or below the
    numerical floor are zero.
    """
    if basis.n != grid.n:
        raise ValueError(f"basis has {basis.n} samples but grid has {grid.n}")
    l = basis.l if l is None else l
    scaled = basis.phi[:, :l] * _inverse_sqrt_lambdas(basis, l)
    b = scipy.fft.fft(scaled, axis=0)
    b /= grid.n
    return scipy.fft.fftshift(b, axes=0)


@dataclass(frozen=True)
class NormTable:
    """Truncated squared RKHS norms over the DFT grid.

    ``w[r, i]`` is ``w_l`` at ``l = truncations[i]`` for grid row ``r``;
    ``coeff_power[r, j]`` is ``|<phi_j, f_r>|^2`` for ``j < max(truncations)``.
    """

    grid: FrequencyGrid
    truncations: tuple
    w: np.ndarray
    coeff_power: np.ndarray
    lambdas: np.ndarray
    _cumulative: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def omegas(self) -> np.ndarray:
        return self.grid.omegas

    @property
    def max_l(self) -> int:
        return self.coeff_power.shape[1]

    def weighted_power(self) -> np.ndarray:
        """``|<phi_j, f_r>|^2 / lambda_j`` with floored eigenvalues excluded."""
        if "weighted" not in self._cumulative:
            inv = np.zeros_like(self.lambdas)
            ok = self.lambdas > 1e-12 * self.lambdas[0]
            inv[ok] = 1.0 / self.lambdas[ok]
            self._cumulative["weighted"] = self.coeff_power * inv
        return self._cumulative["weighted"]

    def cumulative(self) -> np.ndarray:
        """``w_l`` for every ``l = 1..max_l``; column ``l - 1`` holds ``w_l``."""
        if "cum" not in self._cumulative:
            self._cumulative["cum"] = np.cumsum(self.weighted_power(), axis=1)
        return self._cumulative["cum"]

    def w_at(self, l: int) -> np.ndarray:
        """``w_l`` for all grid rows, for any ``0 <= l <= max_l``."""
        if l in self.truncations:
            return self.w[:, self.truncations.index(l)]
        if not 0 <= l <= self.max_l:
            raise ValueError(f"truncation {l} outside stored range [0, {self.max_l}]")
        if l == 0:
            return np.zeros(self.grid.n)
        return self.cumulative()[:, l - 1]


def norm_table(basis: SpectralBasis, grid: FrequencyGrid, truncations: Sequence[int]) -> NormTable:
    """Evaluate ``w_l`` on the DFT grid for each requested truncation ``l``."""
    truncations = tuple(int(l) for l in truncations)
    if not truncations:
        raise ValueError("at least one truncation level is required")
    bad = [l for l in truncations if not 0 <= l <= basis.l]
    if bad:
        raise ValueError(f"truncations {bad} exceed the {basis.l} available eigenpairs")
    max_l = max(truncations)
    b = coeffs_fft(basis, grid, max_l)
    weighted = b.real**2 + b.imag**2
    coeff_power = weighted * basis.lambdas[:max_l]
    cum = np.cumsum(weighted, axis=1)
    zero = np.zeros((grid.n, 1))
    cum0 = np.concatenate([zero, cum], axis=1)
    w = np.ascontiguousarray(cum0[:, list(truncations)])
    table = NormTable(grid=grid, truncations=truncations, w=w, coeff_power=coeff_power,
                      lambdas=np.array(basis.lambdas[:max_l]))
    table._cumulative["weighted"] = weighted
    table._cumulative["cum"] = cum
    return table


def truncated_norm_direct(basis: SpectralBasis, f, l: int | None = None) -> float:
    """``w_l(f)`` by direct summation for an arbitrary sampled function ``f``."""
    l = basis.l if l is None else l
    a = basis.phi[:, :l].T @ np.asarray(f) / basis.n
    inv = _inverse_sqrt_lambdas(basis, l) ** 2
    return float(np.sum(np.abs(a) ** 2 * inv))


@dataclass(frozen=True)
class NystromFunction:
    """Kernel extension ``h(x) = (1/N) sum_n k(x, x_n) c_n`` of a sampled function.

    ``omega`` is ``None`` for extensions of arbitrary functions.
    """

    coeffs: np.ndarray
    l: int
    rkhs_norm_sq: float
    omega: float | None = None

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]


def nystrom_extend(basis: SpectralBasis, f, l: int | None = None,
                   omega: float | None = None) -> NystromFunction:
    """Extend the sampled function ``f`` using the leading ``l`` eigenpairs.

    The weights are ``c_n = sum_{j<l} a_j / lambda_j phi_j(x_n)`` with
    ``a_j = <phi_j, f>``; eigenpairs below the numerical floor are skipped.
    """
    f = np.asarray(f)
    if f.shape != (basis.n,):
        raise ValueError(f"function has shape {f.shape}, expected ({basis.n},)")
    l = basis.l if l is None else int(l)
    if not 0 <= l <= basis.l:
        raise ValueError(f"truncation {l} exceeds the {basis.l} available eigenpairs")
    lam = basis.lambdas[:l]
    ok = lam > basis.floor
    if not np.all(ok):
        warnings.warn(f"skipping {np.count_nonzero(~ok)} eigenpairs below the numerical floor",
                      RuntimeWarning, stacklevel=2)
    phi = basis.phi[:, :l]
    a = phi.T @ f / basis.n
    inv = np.zeros(l)
    inv[ok] = 1.0 / lam[ok]
    coeffs = phi @ (a * inv)
    norm_sq = float(np.sum(np.abs(a) ** 2 * inv))
    coeffs = np.ascontiguousarray(coeffs)
    coeffs.setflags(write=False)
    return NystromFunction(coeffs=coeffs, l=l, rkhs_norm_sq=norm_sq, omega=omega)


def evaluate(h: NystromFunction, points, gram: GramOperator) -> np.ndarray:
    """Evaluate ``h`` at arbitrary points of the kernel's input space.

    ``gram`` must be the operator the basis was computed from. Points are
    processed in blocks; every row uses the same reduction, so a sample point
    gives the same value whether evaluated alone or with others.
    """
    if h.n != gram.n:
        raise ValueError(f"extension has {h.n} weights but operator has {gram.n} samples")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != gram.samples.shape[1]:
        raise ValueError(
            f"dimension mismatch: points have dimension {pts.shape[1]}, "
            f"kernel expects {gram.samples.shape[1]}"
        )
    out = np.empty(pts.shape[0], dtype=np.result_type(h.coeffs, float))
    for blk in _row_blocks(pts.shape[0], gram.n):
        rows = gram.kernel_rows(pts[blk])
        out[blk] = (rows * h.coeffs).sum(axis=1) / gram.n
    return out[0] if single else out


def write_norms_csv(path, table: NormTable, l0: int, l1: int) -> None:
    """``omega,w_l0,w_l1,ratio``, one row per grid frequency."""
    from .selection import ratio

    w0, w1 = table.w_at(l0), table.w_at(l1)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["omega", "w_l0", "w_l1", "ratio"])
        for om, a, b in zip(table.omegas, w0, w1):
            writer.writerow([f"{om:.17g}", f"{a:.17g}", f"{b:.17g}", f"{ratio(a, b):.17g}"])
