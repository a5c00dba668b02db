"""Kernels on embedded data and the sampled kernel integral operator.

The operator acts on functions sampled on the data points ``x_0..x_{N-1}`` as

    (G f)(x_m) = (1/N) sum_n k(x_m, x_n) f(x_n)

and is stored either as a dense ``N x N`` kernel matrix or recomputed row
block by row block (matrix-free). Both paths compute kernel entries with the
same routine, so they agree entry by entry.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

log = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
COVARIANCE = "covariance"
MARKOV = "markov-gaussian"
FAMILIES = (GAUSSIAN, COVARIANCE, MARKOV)

KERNEL_FLOOR = 1e-300
SIGMA_HAT_FLOOR = 1e-150
DENSE_LIMIT = 12000
# ~32 MB of float64 per row block
_BLOCK_ENTRIES = 1 << 22

EPSILON_GRID = 2.0 ** np.arange(-40.0, 40.0 + 0.125, 0.25)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str = MARKOV
    epsilon: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family == COVARIANCE:
            object.__setattr__(self, "epsilon", None)
        elif self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"bandwidth must be positive, got {self.epsilon}")

    @property
    def is_gaussian(self) -> bool:
        return self.family in (GAUSSIAN, MARKOV)


def eval_gaussian(y1, y2, epsilon: float) -> float:
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise ValueError(f"dimension mismatch: {y1.shape} vs {y2.shape}")
    if not epsilon > 0:
        raise ValueError(f"bandwidth must be positive, got {epsilon}")
    return float(np.exp(-np.sum((y1 - y2) ** 2) / epsilon))


def eval_covariance(y1, y2) -> float:
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise ValueError(f"dimension mismatch: {y1.shape} vs {y2.shape}")
    return float(np.dot(y1.ravel(), y2.ravel()))


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"points must be a 2-d array, got shape {x.shape}")
    return np.ascontiguousarray(x)


def raw_kernel(queries: np.ndarray, samples: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Unnormalized kernel values between two point sets, shape ``(len(queries), len(samples))``."""
    if queries.shape[1] != samples.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries have dimension {queries.shape[1]}, "
            f"samples {samples.shape[1]}"
        )
    if spec.family == COVARIANCE:
        return queries @ samples.T
    if spec.epsilon is None:
        raise KernelError("gaussian kernel bandwidth not set; tune it first")
    d2 = cdist(queries, samples, "sqeuclidean")
    np.divide(d2, -spec.epsilon, out=d2)
    np.exp(d2, out=d2)
    d2[d2 < KERNEL_FLOOR] = 0.0
    return d2


def tune_bandwidth(points, max_points: int = 2000, grid: np.ndarray = EPSILON_GRID) -> float:
    """Pick a gaussian bandwidth by maximizing the log-log slope of the kernel sum.

    ``S(eps) = N^-2 sum_{m,n} exp(-d^2(x_m, x_n) / eps)`` is evaluated on the dyadic
    grid ``grid`` and the grid point with the largest centered difference of
    ``log S`` against ``log eps`` is returned. Data longer than ``max_points``
    is thinned with a uniform stride.
    """
    x = _as_points(points)
    if x.shape[0] < 2:
        raise KernelError("bandwidth tuning needs at least 2 points")
    if x.shape[0] > max_points:
        stride = -(-x.shape[0] // max_points)
        x = x[::stride]
    d2 = pdist(x, "sqeuclidean")
    if not np.any(d2 > 0):
        raise KernelError("cannot tune bandwidth: all points are identical")
    log_s = log_kernel_sums(d2, x.shape[0], grid)
    log_eps = np.log(grid)
    slope = (log_s[2:] - log_s[:-2]) / (log_eps[2:] - log_eps[:-2])
    return float(grid[1 + int(np.argmax(slope))])


def log_kernel_sums(pair_d2: np.ndarray, n: int, grid: np.ndarray) -> np.ndarray:
    """``log S(eps)`` for each grid value from the condensed pairwise squared distances."""
    out = np.empty(len(grid))
    for i, eps in enumerate(grid):
        off = 2.0 * np.exp(-pair_d2 / eps).sum()
        out[i] = np.log((n + off) / n**2)
    return out


@dataclass(frozen=True)
class MarkovWeights:
    """Sample-point values of the normalization functions rho, sigma, sigma_hat."""

    rho: np.ndarray
    sigma: np.ndarray
    sigma_hat: np.ndarray


def _row_blocks(n_rows: int, n_cols: int):
    size = max(1, _BLOCK_ENTRIES // max(n_cols, 1))
    for start in range(0, n_rows, size):
        yield slice(start, min(start + size, n_rows))


def _normalizers(raw_rows: np.ndarray, rho_samples: np.ndarray | None):
    # shared by construction and out-of-sample evaluation so both agree bitwise
    rho = raw_rows.mean(axis=1)
    if rho_samples is None:
        return rho, None
    sigma = (raw_rows / rho_samples).mean(axis=1)
    return rho, sigma


class GramOperator:
    """Sampled kernel integral operator on ``N`` points.

    Parameters
    ----------
    samples
        Embedded data, shape ``(N, d)``.
    spec
        Kernel family and bandwidth.
    storage
        ``"dense"``, ``"matrix-free"`` or ``"auto"`` (dense when ``N <= dense_limit``).
    normalization
        Markov normalization weights. Normally computed via :func:`markov_normalize`.
    """

    def __init__(self, samples, spec: KernelSpec, storage: str = "auto",
                 normalization: MarkovWeights | None = None, dense_limit: int = DENSE_LIMIT,
                 _matrix: np.ndarray | None = None):
        self.samples = _as_points(samples)
        self.samples.setflags(write=False)
        self.spec = spec
        if storage == "auto":
            storage = "dense" if self.n <= dense_limit else "matrix-free"
        if storage not in ("dense", "matrix-free"):
            raise ValueError(f"unknown storage mode {storage!r}")
        self.storage = storage
        self.normalization = normalization
        self.dense_limit = dense_limit
        self._matrix = _matrix
        if storage == "dense" and self._matrix is None:
            self._matrix = self._assemble()
        if self._matrix is not None:
            self._matrix.setflags(write=False)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def is_markov(self) -> bool:
        return self.normalization is not None

    def __repr__(self):
        return (f"GramOperator(n={self.n}, family={self.spec.family!r}, "
                f"epsilon={self.spec.epsilon!r}, storage={self.storage!r})")

    def kernel_rows(self, queries) -> np.ndarray:
        """Kernel values ``k(q, x_n)`` for arbitrary query points, shape ``(len(queries), N)``.

        For Markov-normalized operators the query normalization is computed on
        the fly from the raw kernel row.
        """
        q = _as_points(queries)
        rows = raw_kernel(q, self.samples, self.spec)
        if self.normalization is None:
            return rows
        w = self.normalization
        rho, sigma = _normalizers(rows, w.rho)
        sigma_hat = np.sqrt(sigma * rho)
        if np.any(sigma_hat <= SIGMA_HAT_FLOOR):
            raise KernelError("query point too far from the data: normalization underflow")
        rows /= sigma_hat[:, None]
        rows /= w.sigma_hat
        return rows

    def _assemble(self) -> np.ndarray:
        k = np.empty((self.n, self.n))
        for blk in _row_blocks(self.n, self.n):
            k[blk] = self.kernel_rows(self.samples[blk])
        return k

    def matrix(self) -> np.ndarray:
        """The ``N x N`` kernel matrix (not divided by ``N``); assembled on demand."""
        if self._matrix is not None:
            return self._matrix
        return self._assemble()

    def apply(self, f) -> np.ndarray:
        """``(1/N) sum_n k(x_m, x_n) f(x_n)`` for a vector or a matrix of column vectors."""
        f = np.asarray(f)
        if f.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: operator has {self.n} points, input has {f.shape[0]}")
        if np.iscomplexobj(f):
            return self.apply(f.real) + 1j * self.apply(f.imag)
        f = f.astype(float, copy=False)
        if self._matrix is not None:
            return (self._matrix @ f) / self.n
        out = np.empty(f.shape)
        for blk in _row_blocks(self.n, self.n):
            out[blk] = self.kernel_rows(self.samples[blk]) @ f
        return out / self.n

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.spec.family}|{self.spec.epsilon!r}|{self.is_markov}|".encode())
        h.update(np.ascontiguousarray(self.samples).tobytes())
        return h.hexdigest()


def apply_gram(gram: GramOperator, f) -> np.ndarray:
    return gram.apply(f)


def markov_normalize(gram: GramOperator, _inplace: bool = False) -> GramOperator:
    """Symmetric Markov normalization of a gaussian Gram operator.

    With ``rho = K 1`` and ``sigma = K (1 / rho)`` evaluated at the samples, the
    normalized kernel is ``k(x, y) / (sigma_hat(x) sigma_hat(y))`` where
    ``sigma_hat = sqrt(sigma * rho)``. Its largest eigenvalue is 1.
    """
    if gram.spec.family == COVARIANCE:
        raise KernelError("Markov normalization needs a positive-valued kernel, not covariance")
    if gram.is_markov:
        raise KernelError("operator is already Markov normalized")
    n = gram.n
    raw = gram._matrix
    rho = np.empty(n)
    for blk in _row_blocks(n, n):
        rows = raw[blk] if raw is not None else raw_kernel(gram.samples[blk], gram.samples, gram.spec)
        rho[blk], _ = _normalizers(rows, None)
    if np.any(rho <= 0):
        raise KernelError("nonpositive kernel sums; kernel values must be positive")
    sigma = np.empty(n)
    for blk in _row_blocks(n, n):
        rows = raw[blk] if raw is not None else raw_kernel(gram.samples[blk], gram.samples, gram.spec)
        _, sigma[blk] = _normalizers(rows, rho)
    sigma_hat = np.sqrt(sigma * rho)
    if np.any(sigma_hat <= SIGMA_HAT_FLOOR):
        raise KernelError("normalization underflow: sigma_hat below floor")
    weights = MarkovWeights(rho=rho, sigma=sigma, sigma_hat=sigma_hat)
    for a in (rho, sigma, sigma_hat):
        a.setflags(write=False)
    spec = KernelSpec(MARKOV, gram.spec.epsilon)
    matrix = None
    if raw is not None:
        if _inplace and raw.flags.owndata:
            matrix = raw
            matrix.setflags(write=True)
        else:
            matrix = raw.copy()
        matrix /= sigma_hat[:, None]
        matrix /= sigma_hat
    return GramOperator(gram.samples, spec, storage=gram.storage, normalization=weights,
                        dense_limit=gram.dense_limit, _matrix=matrix)


def build_gram(samples, spec: KernelSpec, storage: str = "auto",
               dense_limit: int = DENSE_LIMIT) -> GramOperator:
    """Construct the Gram operator for ``spec``, tuning the bandwidth if unset."""
    samples = _as_points(samples)
    if spec.is_gaussian and spec.epsilon is None:
        eps = tune_bandwidth(samples)
        log.info("autotuned bandwidth epsilon=%g", eps)
        spec = KernelSpec(spec.family, eps)
    if spec.family != MARKOV:
        return GramOperator(samples, spec, storage=storage, dense_limit=dense_limit)
    raw = GramOperator(samples, KernelSpec(GAUSSIAN, spec.epsilon), storage=storage,
                       dense_limit=dense_limit)
    return markov_normalize(raw, _inplace=True)


def markov_row_sums(gram: GramOperator) -> np.ndarray:
    """Row averages ``(1/N) sum_n p(x_m, x_n)`` of the non-symmetric Markov kernel.

    ``p(x, y) = k(x, y) / (sigma(x) rho(y))`` and should average to 1 on every row.
    """
    if not gram.is_markov:
        raise KernelError("operator is not Markov normalized")
    w = gram.normalization
    raw_spec = KernelSpec(GAUSSIAN, gram.spec.epsilon)
    out = np.empty(gram.n)
    for blk in _row_blocks(gram.n, gram.n):
        rows = raw_kernel(gram.samples[blk], gram.samples, raw_spec)
        out[blk] = (rows / w.rho).mean(axis=1) / w.sigma[blk]
    return out
