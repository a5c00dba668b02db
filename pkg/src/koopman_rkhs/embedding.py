"""Delay-coordinate embedding of observation series."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DELAYS = {"torus": 5, "l63": 2, "product": 10}


@dataclass(frozen=True)
class EmbeddedSeries:
    """Delay vectors built from ``q`` consecutive observations.

    Row ``n`` of ``vectors`` holds ``(F[n+q-1], F[n+q-2], ..., F[n])``, newest
    sample first. ``source_offset`` is the raw index of the newest sample in
    row 0.
    """

    vectors: np.ndarray
    q: int

    @property
    def source_offset(self) -> int:
        return self.q - 1

    def __len__(self) -> int:
        return self.vectors.shape[0]


def delay_embed(series, q: int) -> EmbeddedSeries:
    """Stack ``q`` lagged copies of ``series``; no padding, so ``q - 1`` rows are lost."""
    arr = np.asarray(series)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"series must be 1-d or 2-d, got shape {arr.shape}")
    q = int(q)
    if q < 1:
        raise ValueError(f"number of delays must be >= 1, got {q}")
    n = arr.shape[0]
    if n < q:
        raise ValueError(f"series of length {n} is shorter than the number of delays {q}")
    n_out = n - q + 1
    blocks = [arr[q - 1 - lag: q - 1 - lag + n_out] for lag in range(q)]
    vectors = np.ascontiguousarray(np.concatenate(blocks, axis=1))
    vectors.setflags(write=False)
    return EmbeddedSeries(vectors=vectors, q=q)
