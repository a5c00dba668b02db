"""Benchmark flows, trajectory generation and observation maps.

Three systems are provided: a linear rotation on the 2-torus, the Lorenz 63
flow, and the product of Lorenz 63 with a circle rotation. Rotations are
advanced analytically; the Lorenz 63 vector field is integrated with an
adaptive Dormand-Prince 5(4) pair compiled with numba.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

TORUS = "torus"
L63 = "l63"
PRODUCT = "product"
FLOW_KINDS = (TORUS, L63, PRODUCT)

_DEFAULT_PARAMS = {
    TORUS: {"alpha1": 1.0, "alpha2": math.sqrt(2.0)},
    L63: {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    PRODUCT: {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0, "alpha": 1.0, "c": 0.2},
}

DEFAULT_X0 = {
    TORUS: (0.0, 0.0),
    L63: (0.0, 1.0, 1.05),
    PRODUCT: (0.0, 1.0, 1.05, 0.0),
}

DEFAULT_SPINUP = {TORUS: 0.0, L63: 4000.0, PRODUCT: 4000.0}

STATE_DIM = {TORUS: 2, L63: 3, PRODUCT: 4}

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot make progress."""


@dataclass(frozen=True)
class FlowSpec:
    """A benchmark flow and its parameters.

    Missing parameters are filled with the standard benchmark values, e.g.
    ``FlowSpec("torus")`` has ``alpha1=1``, ``alpha2=sqrt(2)``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}; expected one of {FLOW_KINDS}")
        unknown = set(self.params) - set(_DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    @property
    def dim(self) -> int:
        return STATE_DIM[self.kind]


@dataclass(frozen=True)
class TrajectoryConfig:
    n: int
    dt: float = 0.01
    x0: tuple | None = None
    spinup: float | None = None
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"trajectory needs at least 2 samples, got n={self.n}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.spinup is not None and self.spinup < 0:
            raise ValueError(f"spinup must be nonnegative, got {self.spinup}")


@dataclass(frozen=True)
class Trajectory:
    """Sampled states of a flow and the corresponding observations.

    ``states`` has shape ``(n, state_dim)`` and ``series`` has shape ``(n, m)``.
    """

    states: np.ndarray
    dt: float
    series: np.ndarray
    kind: str | None = None

    def __post_init__(self):
        self.states.setflags(write=False)
        self.series.setflags(write=False)

    def __len__(self) -> int:
        return self.series.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))


def flow_torus(theta, t: float, alpha1: float = 1.0, alpha2: float = math.sqrt(2.0)) -> np.ndarray:
    """Exact time-``t`` map of the linear torus rotation, angles reduced to [0, 2pi)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (2,):
        raise ValueError(f"torus state must have 2 angles, got shape {theta.shape}")
    out = theta + t * np.array([alpha1, alpha2])
    return np.mod(out, TWO_PI)


def l63_vector_field(x, sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ValueError(f"Lorenz 63 state must have 3 components, got shape {x.shape}")
    return np.array([
        sigma * (x[1] - x[0]),
        x[0] * (rho - x[2]) - x[1],
        x[0] * x[1] - beta * x[2],
    ])


# Dormand-Prince 5(4) tableau.
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0,
)


@njit(cache=True)
def _l63(y, sigma, rho, beta, out):
    out[0] = sigma * (y[1] - y[0])
    out[1] = y[0] * (rho - y[2]) - y[1]
    out[2] = y[0] * y[1] - beta * y[2]


@njit(cache=True)
def _dp5_l63(y0, t_end, sigma, rho, beta, rtol, atol, h):
    """Advance the L63 state by ``t_end``; returns (state, next step, ok)."""
    y = y0.copy()
    if t_end <= 0.0:
        return y, h, True
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    k5 = np.empty(3)
    k6 = np.empty(3)
    k7 = np.empty(3)
    tmp = np.empty(3)
    ynew = np.empty(3)
    _l63(y, sigma, rho, beta, k1)
    t = 0.0
    h_min = 1e-14 * max(1.0, t_end)
    h_keep = h
    while t < t_end:
        last = False
        step = h
        if t + step >= t_end:
            step = t_end - t
            last = True
        if step < h_min and not last:
            return y, h, False
        for i in range(3):
            tmp[i] = y[i] + step * _A21 * k1[i]
        _l63(tmp, sigma, rho, beta, k2)
        for i in range(3):
            tmp[i] = y[i] + step * (_A31 * k1[i] + _A32 * k2[i])
        _l63(tmp, sigma, rho, beta, k3)
        for i in range(3):
            tmp[i] = y[i] + step * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        _l63(tmp, sigma, rho, beta, k4)
        for i in range(3):
            tmp[i] = y[i] + step * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        _l63(tmp, sigma, rho, beta, k5)
        for i in range(3):
            tmp[i] = y[i] + step * (
                _A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i] + _A65 * k5[i]
            )
        _l63(tmp, sigma, rho, beta, k6)
        for i in range(3):
            ynew[i] = y[i] + step * (
                _B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i] + _B6 * k6[i]
            )
        _l63(ynew, sigma, rho, beta, k7)
        err = 0.0
        for i in range(3):
            e = step * (
                _E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i]
            )
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
        err = math.sqrt(err / 3.0)
        if not math.isfinite(err):
            h = 0.2 * step
            if h < h_min:
                return y, h, False
            continue
        if err <= 1.0:
            t = t_end if last else t + step
            for i in range(3):
                y[i] = ynew[i]
                k1[i] = k7[i]
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if last:
                # a step clipped to land on t_end says little about the next one
                h_keep = h if step < h else step * fac
            h = step * fac
        else:
            h = step * max(0.2, 0.9 * err ** -0.2)
            if h < h_min:
                return y, h, False
    return y, h_keep, True


@njit(cache=True)
def _l63_samples(y0, n, dt, sigma, rho, beta, rtol, atol, h):
    out = np.empty((n, 3))
    y = y0.copy()
    out[0] = y
    for k in range(1, n):
        y, h, ok = _dp5_l63(y, dt, sigma, rho, beta, rtol, atol, h)
        if not ok:
            return out, k, False
        out[k] = y
    return out, n, True


def _integrate_l63(x, t, flow, rtol, atol):
    y, _, ok = _dp5_l63(
        np.array(x, dtype=float), float(t), flow["sigma"], flow["rho"], flow["beta"],
        rtol, atol, min(1e-3, max(t, 1e-12)),
    )
    if not ok:
        raise IntegrationError(f"step size underflow integrating Lorenz 63 over t={t}")
    if not np.all(np.isfinite(y)):
        raise IntegrationError("Lorenz 63 state became non-finite")
    return y


def integrate(flow: FlowSpec, x0, t: float, tol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> np.ndarray:
    """Return the time-``t`` flow image of ``x0``.

    Rotations are evaluated exactly. The Lorenz 63 part is integrated with
    relative tolerance ``tol`` and absolute tolerance ``atol``.
    """
    if t < 0:
        raise ValueError(f"integration time must be nonnegative, got {t}")
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (flow.dim,):
        raise ValueError(f"{flow.kind} state must have {flow.dim} components, got shape {x0.shape}")
    if flow.kind == TORUS:
        return flow_torus(x0, t, flow["alpha1"], flow["alpha2"])
    if flow.kind == L63:
        return _integrate_l63(x0, t, flow, tol, atol)
    xyz = _integrate_l63(x0[:3], t, flow, tol, atol)
    theta = math.fmod(x0[3] + flow["alpha"] * t, TWO_PI)
    return np.array([*xyz, theta % TWO_PI])


def observe(flow: FlowSpec | str, x) -> np.ndarray:
    """Apply the benchmark observation map to one state or an array of states."""
    if isinstance(flow, str):
        flow = FlowSpec(flow)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if xs.shape[1] != flow.dim:
        raise ValueError(f"{flow.kind} state must have {flow.dim} components, got {xs.shape[1]}")
    if flow.kind == TORUS:
        out = (np.sin(xs[:, 0]) * np.cos(xs[:, 1]))[:, None]
    elif flow.kind == L63:
        out = xs.copy()
    else:
        c = flow["c"]
        th = xs[:, 3]
        out = xs[:, :3] + c * np.stack([np.sin(th), np.cos(2 * th), np.sin(2 * th)], axis=1)
    return out[0] if single else out


def generate_trajectory(flow: FlowSpec, cfg: TrajectoryConfig) -> Trajectory:
    """Sample ``cfg.n`` states at interval ``cfg.dt`` after discarding the spinup."""
    x0 = np.asarray(cfg.x0 if cfg.x0 is not None else DEFAULT_X0[flow.kind], dtype=float)
    if x0.shape != (flow.dim,):
        raise ValueError(f"{flow.kind} initial state must have {flow.dim} components")
    spinup = DEFAULT_SPINUP[flow.kind] if cfg.spinup is None else cfg.spinup
    n, dt = cfg.n, cfg.dt

    if flow.kind == TORUS:
        start = flow_torus(x0, spinup, flow["alpha1"], flow["alpha2"])
        steps = np.arange(n)[:, None] * (dt * np.array([flow["alpha1"], flow["alpha2"]]))
        states = np.mod(start + steps, TWO_PI)
    else:
        y0 = integrate(flow, x0, spinup, cfg.rtol, cfg.atol) if spinup > 0 else x0
        xyz, reached, ok = _l63_samples(
            y0[:3].copy(), n, dt, flow["sigma"], flow["rho"], flow["beta"],
            cfg.rtol, cfg.atol, min(1e-3, dt),
        )
        if not ok:
            raise IntegrationError(f"step size underflow at sample {reached}")
        if not np.all(np.isfinite(xyz)):
            raise IntegrationError("Lorenz 63 trajectory became non-finite")
        if flow.kind == L63:
            states = xyz
        else:
            theta = np.mod(y0[3] + flow["alpha"] * dt * np.arange(n), TWO_PI)
            states = np.column_stack([xyz, theta])
    states = np.ascontiguousarray(states)
    return Trajectory(states=states, dt=dt, series=observe(flow, states), kind=flow.kind)


def write_series_csv(path, series, dt: float) -> None:
    """Write an observation series as ``t,c0,c1,...`` with round-trippable floats."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"c{i}" for i in range(series.shape[1])])
        for n, row in enumerate(series):
            writer.writerow([f"{n * dt:.17g}"] + [f"{v:.17g}" for v in row])


def read_series_csv(path, dt: float | None = None, rtol: float = 1e-9) -> tuple[np.ndarray, float | None]:
    """Read an observation series written by :func:`write_series_csv` or by hand.

    Returns ``(series, dt)``. When a ``t`` column is present the timestamps must
    be uniform to ``rtol``; their spacing is returned and, if ``dt`` is given,
    cross-checked against it. Without a ``t`` column the supplied ``dt`` is
    returned unchanged.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    values = []
    for i, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise ValueError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            raise ValueError(f"{path}: non-numeric cell in row {i}") from None
        if not all(math.isfinite(v) for v in values[-1]):
            raise ValueError(f"{path}: non-finite cell in row {i}")
    if not values:
        raise ValueError(f"{path}: no data rows")
    table = np.array(values, dtype=float)
    if "t" in header:
        ti = header.index("t")
        t = table[:, ti]
        table = np.delete(table, ti, axis=1)
        if len(t) >= 2:
            steps = np.diff(t)
            ref = steps[0]
            if not ref > 0:
                raise ValueError(f"{path}: timestamps not increasing at row 2")
            bad = np.flatnonzero(np.abs(steps - ref) > rtol * abs(ref))
            if bad.size:
                raise ValueError(f"{path}: non-uniform timestamps at row {bad[0] + 2}")
            if dt is not None and abs(ref - dt) > rtol * dt:
                raise ValueError(f"{path}: timestamp spacing {ref!r} does not match dt={dt!r}")
            dt = float(ref) if dt is None else dt
    if table.shape[1] == 0:
        raise ValueError(f"{path}: no data columns")
    return table, dt


def as_series(values: Sequence) -> np.ndarray:
    """Coerce a scalar or vector time series to shape ``(n, m)``."""
    arr = np.asarray(values)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"series must be 1-d or 2-d, got shape {arr.shape}")
    return arr
