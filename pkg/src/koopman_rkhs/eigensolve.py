"""Leading eigenpairs of the sampled kernel operator.

Eigenvectors are scaled to unit norm in the empirical inner product
``<f, g> = (1/N) sum_n conj(f_n) g_n``, i.e. each column has Euclidean norm
``sqrt(N)``.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .kernel import GramOperator

log = logging.getLogger(__name__)

FLOOR_FACTOR = 1e-12
DEGENERACY_RTOL = 1e-9
RESIDUAL_FACTOR = 1e-8

CACHE_MAGIC = b"KRHSBAS\x00"
CACHE_VERSION = 1


class EigenSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenvalues (nonincreasing) and sample values of the eigenfunctions.

    Attributes
    ----------
    lambdas
        Shape ``(l,)``.
    phi
        Shape ``(N, l)``; column ``j`` holds ``phi_j(x_n)``.
    residuals
        ``||G phi_j - lambda_j phi_j||`` per column, if computed.
    next_lambda
        The eigenvalue just past the truncation, when known; used to flag a
        truncation that splits a degenerate eigenspace.
    """

    lambdas: np.ndarray
    phi: np.ndarray
    residuals: np.ndarray | None = None
    next_lambda: float | None = None

    def __post_init__(self):
        if self.phi.ndim != 2 or self.phi.shape[1] != self.lambdas.shape[0]:
            raise ValueError(f"phi shape {self.phi.shape} does not match {self.lambdas.shape[0]} eigenvalues")
        self.lambdas.setflags(write=False)
        self.phi.setflags(write=False)

    @property
    def l(self) -> int:
        return self.lambdas.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def floor(self) -> float:
        return FLOOR_FACTOR * float(self.lambdas[0])

    def splits_eigenspace(self, l: int | None = None) -> bool:
        """True if truncating after ``l`` columns cuts through a degenerate eigenvalue."""
        l = self.l if l is None else l
        if l <= 0:
            return False
        if l < self.l:
            nxt = self.lambdas[l]
        elif self.next_lambda is not None:
            nxt = self.next_lambda
        else:
            return False
        last = self.lambdas[l - 1]
        return abs(last - nxt) <= DEGENERACY_RTOL * abs(last)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _dense_pairs(gram: GramOperator, k: int):
    n = gram.n
    mat = gram.matrix()
    vals, vecs = scipy.linalg.eigh(mat, subset_by_index=[n - k, n - 1], driver="evr",
                                   check_finite=False)
    return vals[::-1] / n, vecs[:, ::-1]


def _lanczos_pairs(gram: GramOperator, k: int, seed: int, tol: float, max_restarts: int):
    n = gram.n
    op = LinearOperator((n, n), matvec=gram.apply, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    ncv = min(2 * k + 16, n)
    try:
        vals, vecs = eigsh(op, k=k, which="LA", v0=v0, ncv=ncv, tol=tol, maxiter=max_restarts)
    except ArpackNoConvergence as exc:
        raise EigenSolveError(
            f"Lanczos solver did not converge: {len(exc.eigenvalues)} of {k} eigenpairs "
            f"after {max_restarts} restarts"
        ) from exc
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def top_eigenpairs(gram: GramOperator, l: int, method: str = "auto", seed: int = 0,
                   tol: float = 1e-10, max_restarts: int = 300,
                   check_residuals: bool = True) -> SpectralBasis:
    """Compute the ``l`` largest eigenpairs of ``gram``.

    ``method`` is ``"dense"`` (LAPACK subset solver on the assembled matrix),
    ``"lanczos"`` (implicitly restarted Lanczos over ``gram.apply``) or
    ``"auto"``, which uses the dense solver when the matrix is stored and a
    sizeable fraction of the spectrum is requested. Eigenvalues at or below
    ``1e-12 * lambda_0`` are dropped with a warning.
    """
    n = gram.n
    if not 1 <= l <= n:
        raise ValueError(f"number of eigenpairs must be in [1, {n}], got {l}")
    k = min(l + 1, n)
    if method == "auto":
        method = "dense" if gram.storage == "dense" and (k >= n // 20 or n <= 2000) else "lanczos"
    if method == "lanczos" and k >= n:
        method = "dense"
    if method == "dense":
        vals, vecs = _dense_pairs(gram, k)
    elif method == "lanczos":
        vals, vecs = _lanczos_pairs(gram, k, seed, tol, max_restarts)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")

    if not np.all(np.isfinite(vals)):
        raise EigenSolveError("eigensolver returned non-finite eigenvalues; check the data for inf or nan")
    top = vals[0]
    if not top > 0:
        raise EigenSolveError(f"leading eigenvalue is not positive ({top!r})")
    vals = np.where(vals < 0, np.where(vals >= -1e-12 * top, 0.0, vals), vals)
    if np.any(vals < 0):
        raise EigenSolveError(f"operator has negative eigenvalue {vals.min()!r}; kernel not positive semidefinite")
    next_lambda = float(vals[l]) if k > l else None
    vals, vecs = vals[:l], vecs[:, :l]
    keep = vals > FLOOR_FACTOR * top
    if not np.all(keep):
        n_keep = int(np.count_nonzero(keep))
        warnings.warn(
            f"only {n_keep} of {l} eigenvalues exceed the numerical floor "
            f"{FLOOR_FACTOR * top:.3g}; truncating", RuntimeWarning, stacklevel=2,
        )
        vals, vecs = vals[:n_keep], vecs[:, :n_keep]
        next_lambda = None
    phi = _fix_signs(vecs) * np.sqrt(n)
    vals = np.ascontiguousarray(vals)
    phi = np.ascontiguousarray(phi)

    basis = SpectralBasis(lambdas=vals, phi=phi, next_lambda=next_lambda)
    if check_residuals:
        basis = with_residuals(gram, basis)
    if basis.splits_eigenspace():
        warnings.warn(
            f"truncation l={basis.l} splits a degenerate eigenspace "
            f"(lambda_{basis.l - 1} ~ lambda_{basis.l})", RuntimeWarning, stacklevel=2,
        )
    return basis


def with_residuals(gram: GramOperator, basis: SpectralBasis) -> SpectralBasis:
    """Attach ``||G phi_j - lambda_j phi_j||`` to ``basis``, failing if any is too large.

    The bound is ``1e-8 * lambda_0 * sqrt(N)``, i.e. relative to the scale of
    ``G phi_0``.
    """
    if basis.n != gram.n:
        raise ValueError(f"basis has {basis.n} samples but operator has {gram.n}")
    residuals = np.linalg.norm(gram.apply(basis.phi) - basis.phi * basis.lambdas, axis=0)
    bound = RESIDUAL_FACTOR * float(basis.lambdas[0]) * np.sqrt(basis.n)
    if np.any(residuals > bound):
        j = int(np.argmax(residuals))
        raise EigenSolveError(
            f"eigenpair residual {residuals[j]:.3g} at j={j} exceeds bound {bound:.3g}"
        )
    return SpectralBasis(lambdas=basis.lambdas, phi=basis.phi, residuals=residuals,
                         next_lambda=basis.next_lambda)


def save_basis(path, basis: SpectralBasis, fingerprint: str) -> None:
    """Write ``basis`` in the little-endian binary cache layout.

    Layout: 8-byte magic, uint32 version, uint64 N, uint64 l, 32-byte kernel
    fingerprint (sha256 digest), ``l`` float64 eigenvalues, then ``phi``
    column-major as float64.
    """
    digest = bytes.fromhex(fingerprint)
    if len(digest) != 32:
        raise ValueError("fingerprint must be a sha256 hex digest")
    with Path(path).open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IQQ", CACHE_VERSION, basis.n, basis.l))
        fh.write(digest)
        fh.write(basis.lambdas.astype("<f8").tobytes())
        fh.write(np.asfortranarray(basis.phi).astype("<f8").tobytes(order="F"))


def load_basis(path, fingerprint: str | None = None) -> SpectralBasis:
    """Read a cached basis; refuses a file whose fingerprint differs from ``fingerprint``."""
    data = Path(path).read_bytes()
    head = len(CACHE_MAGIC) + struct.calcsize("<IQQ") + 32
    if len(data) < head or data[:8] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a basis cache file")
    version, n, l = struct.unpack_from("<IQQ", data, 8)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    digest = data[head - 32:head]
    if fingerprint is not None and digest != bytes.fromhex(fingerprint):
        raise ValueError(f"{path}: cached basis was computed for different data or kernel")
    expected = head + 8 * l * (n + 1)
    if len(data) != expected:
        raise ValueError(f"{path}: truncated cache ({len(data)} bytes, expected {expected})")
    lambdas = np.frombuffer(data, dtype="<f8", count=l, offset=head).astype(float)
    phi = np.frombuffer(data, dtype="<f8", count=n * l, offset=head + 8 * l)
    phi = np.ascontiguousarray(phi.reshape((n, l), order="F"), dtype=float)
    return SpectralBasis(lambdas=lambdas, phi=phi)
