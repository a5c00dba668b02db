"""Two-criterion eigenfrequency selection and the frequency lattice."""
from __future__ import annotations

import csv
import functools
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .eigensolve import SpectralBasis
from .rkhs import NormTable, NystromFunction, fourier_function, nystrom_extend

TIE_TOL = 1e-15

# (l0, l1, delta0, delta1) used for the three benchmark systems
DEFAULT_SELECTION = {
    "torus": (100, 1000, 0.1, 1.0),
    "l63": (100, 1000, 1.0, 1.0),
    "product": (1240, 1500, 1.0, 1.0),
}


@dataclass(frozen=True)
class SelectionConfig:
    l0: int
    l1: int
    delta0: float = 1.0
    delta1: float = 1.0

    def __post_init__(self):
        if not 0 <= self.l0 <= self.l1:
            raise ValueError(f"need 0 <= l0 <= l1, got l0={self.l0}, l1={self.l1}")
        if not (self.delta0 > 0 and self.delta1 > 0):
            raise ValueError(f"thresholds must be positive, got {self.delta0}, {self.delta1}")

    @classmethod
    def for_benchmark(cls, name: str) -> "SelectionConfig":
        return cls(*DEFAULT_SELECTION[name])


@dataclass(frozen=True)
class CandidateEigenpair:
    omega: float
    w_l0: float
    w_l1: float
    ratio: float
    eigenfunction: NystromFunction


def ratio(w_l0, w_l1):
    """Relative growth ``w_l1 / w_l0 - 1``; ``inf`` where ``w_l0`` is zero."""
    w0 = np.asarray(w_l0, dtype=float)
    w1 = np.asarray(w_l1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = np.where(w0 > 0, w1 / np.where(w0 > 0, w0, 1.0) - 1.0, np.inf)
    return float(r) if r.ndim == 0 else r


def selection_mask(w_l0: np.ndarray, w_l1: np.ndarray, delta0: float, delta1: float) -> np.ndarray:
    """Rows passing both tests: ``w_l0 > delta0`` and ``ratio <= delta1``."""
    w_l0 = np.asarray(w_l0)
    keep = w_l0 > delta0
    r = ratio(w_l0, w_l1)
    return keep & (np.asarray(r) <= delta1)


def _order(a: CandidateEigenpair, b: CandidateEigenpair) -> int:
    if abs(a.w_l1 - b.w_l1) > TIE_TOL * max(1.0, abs(a.w_l1), abs(b.w_l1)):
        return -1 if a.w_l1 < b.w_l1 else 1
    key_a, key_b = (abs(a.omega), a.omega), (abs(b.omega), b.omega)
    return (key_a > key_b) - (key_a < key_b)


def select_eigenfrequencies(table: NormTable, cfg: SelectionConfig,
                            basis: SpectralBasis | None = None,
                            extend: bool = True) -> list[CandidateEigenpair]:
    """Select candidate eigenfrequencies from a norm table.

    Frequencies with ``w_l0 <= delta0`` are rejected first, then those whose
    norm grows by more than ``delta1`` relative to ``w_l0`` between ``l0`` and
    ``l1``. Each survivor's Fourier function is Nystrom-extended with ``l1``
    eigenpairs. Candidates are returned smoothest first, i.e. by
    nondecreasing ``w_l1``, ties broken by ``|omega|``.
    """
    if table.grid.n == 0:
        raise ValueError("empty frequency grid")
    if cfg.l1 > table.max_l:
        raise ValueError(f"l1={cfg.l1} exceeds the {table.max_l} eigenpairs in the table")
    if extend and basis is None:
        raise ValueError("a spectral basis is needed to extend the selected frequencies")
    w0, w1 = table.w_at(cfg.l0), table.w_at(cfg.l1)
    rows = np.flatnonzero(selection_mask(w0, w1, cfg.delta0, cfg.delta1))
    omegas = table.omegas
    out = []
    for r in rows:
        om = float(omegas[r])
        h = None
        if extend:
            f = fourier_function(om, table.grid.n, table.grid.dt)
            h = nystrom_extend(basis, f, cfg.l1, omega=om)
        out.append(CandidateEigenpair(omega=om, w_l0=float(w0[r]), w_l1=float(w1[r]),
                                      ratio=float(ratio(w0[r], w1[r])), eigenfunction=h))
    return sorted(out, key=functools.cmp_to_key(_order))


def frequency_lattice(generators: Sequence[float], max_order: int, nyquist: float) -> list[float]:
    """Integer combinations ``sum c_j w_j`` with ``sum |c_j| <= max_order``.

    Values are folded into ``[-nyquist, nyquist)`` and deduplicated to 1e-12.
    """
    if max_order < 1:
        raise ValueError(f"max_order must be >= 1, got {max_order}")
    gens = [float(g) for g in generators]
    period = 2.0 * nyquist
    values = []
    for coeffs in itertools.product(range(-max_order, max_order + 1), repeat=len(gens)):
        if sum(abs(c) for c in coeffs) > max_order:
            continue
        v = math.fsum(c * g for c, g in zip(coeffs, gens))
        v -= period * math.floor((v + nyquist) / period)
        values.append(v)
    values.sort()
    out: list[float] = []
    for v in values:
        if not out or v - out[-1] > 1e-12:
            out.append(v)
    return out


def near_lattice(omega: float, lattice: Iterable[float], tol: float) -> bool:
    return any(abs(omega - v) <= tol for v in lattice)


def write_candidates(directory, candidates: Sequence[CandidateEigenpair],
                     name: str = "candidates.json") -> Path:
    """Write the candidate list as JSON plus one ``n,re,im`` weight CSV per candidate."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for i, cand in enumerate(candidates):
        rec = {"omega": cand.omega, "w_l0": cand.w_l0, "w_l1": cand.w_l1,
               "ratio": cand.ratio, "weights_file": None}
        h = cand.eigenfunction
        if h is not None:
            fname = f"eigenfunction_{i:03d}.csv"
            write_weights_csv(directory / fname, h)
            rec.update(weights_file=fname, l=h.l, rkhs_norm_sq=h.rkhs_norm_sq)
        records.append(rec)
    path = directory / name
    path.write_text(json.dumps({"candidates": records}, indent=2, allow_nan=True) + "\n")
    return path


def write_weights_csv(path, h: NystromFunction) -> None:
    c = np.asarray(h.coeffs, dtype=complex)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "re", "im"])
        for n, v in enumerate(c):
            writer.writerow([n, f"{v.real:.17g}", f"{v.imag:.17g}"])


def read_weights_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["n", "re", "im"]:
        raise ValueError(f"{path}: expected header n,re,im")
    vals = np.array([[float(r[1]), float(r[2])] for r in rows[1:] if r], dtype=float)
    return vals[:, 0] + 1j * vals[:, 1]
