"""End-to-end runs: data, embedding, kernel basis, norms, selection, exports.

Every stage runs in memory first; files are written only after the whole
computation succeeded, so a failed run leaves no partial outputs behind.
The basis cache is the one exception, since it is reusable on its own.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
import time
import warnings
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import yaml

from . import baseline, dynamics, eigensolve, embedding, rkhs, selection
from . import kernel as kern
from .dynamics import FlowSpec, TrajectoryConfig
from .eigensolve import EigenSolveError, SpectralBasis
from .kernel import KernelSpec

log = logging.getLogger(__name__)

BENCHMARKS = dynamics.FLOW_KINDS
GENERIC_SELECTION = (100, 1000, 1.0, 1.0)
MANIFEST = "manifest.json"
TIMINGS = "timings.json"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``numerical`` separates math from I/O failures."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.numerical = isinstance(cause, (EigenSolveError, dynamics.IntegrationError,
                                            np.linalg.LinAlgError, ArithmeticError))
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class PipelineConfig:
    """Run configuration. ``None`` fields take the benchmark default at resolve time.

    ``source`` is a benchmark name (``torus``, ``l63``, ``product``) or the
    path of a CSV series. ``n`` counts raw samples; the embedded series has
    ``n - delays + 1`` points.
    """

    source: str = "torus"
    n: int = 10000
    dt: float = 0.01
    x0: list | None = None
    spinup: float | None = None
    flow_params: dict = field(default_factory=dict)
    delays: int | None = None
    kernel: str = kern.MARKOV
    epsilon: Any = "auto"
    l: int | None = None
    l0: int | None = None
    l1: int | None = None
    delta0: float | None = None
    delta1: float | None = None
    storage: str = "auto"
    dense_limit: int = kern.DENSE_LIMIT
    eigensolver: str = "auto"
    seed: int = 0
    tol: float = 1e-10
    basis_cache: str | None = None
    surface_points: int = 20
    output: str = "run"

    @property
    def is_benchmark(self) -> bool:
        return self.source in BENCHMARKS

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            if path.suffix == ".json":
                data = json.loads(path.read_text())
            else:
                data = yaml.safe_load(path.read_text()) or {}
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping of keys to values")
        if path.name == MANIFEST:
            data = data.get("config", {})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self) -> "PipelineConfig":
        """Copy with benchmark defaults filled in and values validated."""
        cfg = dataclasses.replace(self, flow_params=dict(self.flow_params))
        bench = cfg.source if cfg.is_benchmark else None
        if cfg.delays is None:
            cfg.delays = embedding.DEFAULT_DELAYS[bench] if bench else 1
        l0, l1, d0, d1 = selection.DEFAULT_SELECTION[bench] if bench else GENERIC_SELECTION
        cfg.l0 = l0 if cfg.l0 is None else cfg.l0
        cfg.l1 = l1 if cfg.l1 is None else cfg.l1
        cfg.delta0 = d0 if cfg.delta0 is None else cfg.delta0
        cfg.delta1 = d1 if cfg.delta1 is None else cfg.delta1
        cfg.l = cfg.l1 if cfg.l is None else cfg.l
        cfg._validate()
        return cfg

    def _validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        # YAML 1.1 reads exponent-only literals such as 1e-10 as strings
        for name in ("dt", "delta0", "delta1", "tol"):
            try:
                setattr(self, name, float(getattr(self, name)))
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be a number, got {getattr(self, name)!r}") from None
        need(isinstance(self.n, int) and self.n >= 2, f"n must be an integer >= 2, got {self.n!r}")
        need(self.dt > 0, f"dt must be positive, got {self.dt!r}")
        need(isinstance(self.delays, int) and self.delays >= 1, f"delays must be >= 1, got {self.delays!r}")
        need(self.kernel in kern.FAMILIES, f"kernel must be one of {kern.FAMILIES}, got {self.kernel!r}")
        if self.epsilon != "auto":
            try:
                self.epsilon = float(self.epsilon)
            except (TypeError, ValueError):
                raise ConfigError(f"epsilon must be 'auto' or a positive number, got {self.epsilon!r}") from None
            need(self.epsilon > 0, f"epsilon must be positive, got {self.epsilon!r}")
        need(0 <= self.l0 <= self.l1, f"need 0 <= l0 <= l1, got l0={self.l0}, l1={self.l1}")
        need(self.l >= max(self.l1, 1), f"l={self.l} must be at least l1={self.l1}")
        need(self.delta0 > 0 and self.delta1 > 0, "delta0 and delta1 must be positive")
        need(self.storage in ("auto", "dense", "matrix-free"), f"unknown storage {self.storage!r}")
        need(self.eigensolver in ("auto", "dense", "lanczos"), f"unknown eigensolver {self.eigensolver!r}")
        need(self.surface_points >= 1, "surface_points must be >= 1")
        if self.is_benchmark:
            try:
                FlowSpec(self.source, self.flow_params)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None


@dataclass
class RunResult:
    """In-memory artifacts of a completed run."""

    config: PipelineConfig
    series: np.ndarray
    embedded: embedding.EmbeddedSeries
    gram: kern.GramOperator
    basis: SpectralBasis
    table: rkhs.NormTable
    selection: selection.SelectionConfig
    candidates: list
    power: baseline.PowerSpectrum
    covariance: baseline.CovarianceNorms | None
    manifest: dict
    timings: dict


def ingest_csv(path, dt: float) -> np.ndarray:
    """Observation series from a CSV file; a ``t`` column, if any, must match ``dt``."""
    series, _ = dynamics.read_series_csv(path, dt=dt)
    return series


def _sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    import numba
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pyyaml": yaml.__version__}


class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except (ConfigError, PipelineError):
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0


def load_series(cfg: PipelineConfig) -> np.ndarray:
    if cfg.is_benchmark:
        flow = FlowSpec(cfg.source, cfg.flow_params)
        x0 = None if cfg.x0 is None else tuple(cfg.x0)
        traj = dynamics.generate_trajectory(flow, TrajectoryConfig(cfg.n, cfg.dt, x0, cfg.spinup))
        return np.asarray(traj.series)
    series = ingest_csv(cfg.source, cfg.dt)
    return series[: cfg.n] if series.shape[0] > cfg.n else series


def _spectral_basis(cfg: PipelineConfig, gram: kern.GramOperator, l: int) -> SpectralBasis:
    fp = gram.fingerprint()
    cache = Path(cfg.basis_cache) if cfg.basis_cache else None
    if cache is not None and cache.is_file():
        try:
            cached = eigensolve.load_basis(cache, fingerprint=fp)
        except ValueError as exc:
            log.warning("ignoring basis cache: %s", exc)
        else:
            if cached.l >= l:
                sub = SpectralBasis(np.array(cached.lambdas[:l]), np.array(cached.phi[:, :l]))
                return eigensolve.with_residuals(gram, sub)
            log.info("basis cache holds %d eigenpairs, %d requested; recomputing", cached.l, l)
    basis = eigensolve.top_eigenpairs(gram, l, method=cfg.eigensolver, seed=cfg.seed, tol=cfg.tol)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        eigensolve.save_basis(cache, basis, fp)
    return basis


def run_pipeline(cfg: PipelineConfig, write: bool = True) -> RunResult:
    """Execute a full run and, if ``write``, export all artifacts to ``cfg.output``."""
    cfg = cfg.resolved()
    if not cfg.is_benchmark and not Path(cfg.source).is_file():
        raise ConfigError(f"input file not found: {cfg.source}")
    stages = _Stages()
    notes: list[str] = []

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        series = stages.run("data", load_series, cfg)
        emb = stages.run("embed", embedding.delay_embed, series, cfg.delays)
        n_emb = len(emb)
        if cfg.l > n_emb:
            raise ConfigError(f"l={cfg.l} exceeds the {n_emb} embedded samples")
        eps = None if cfg.epsilon == "auto" else cfg.epsilon
        spec = KernelSpec(cfg.kernel, eps)
        gram = stages.run("kernel", kern.build_gram, emb.vectors, spec, cfg.storage, cfg.dense_limit)
        basis = stages.run("eigensolve", _spectral_basis, cfg, gram, cfg.l)

        l0, l1 = cfg.l0, cfg.l1
        if basis.l < l1:
            notes.append(f"only {basis.l} usable eigenpairs; truncations clamped to l<={basis.l}")
            l1, l0 = basis.l, min(l0, basis.l)
        if basis.splits_eigenspace(l0) or basis.splits_eigenspace(l1):
            notes.append("a truncation level splits a degenerate eigenspace")
        sel_cfg = selection.SelectionConfig(l0, l1, cfg.delta0, cfg.delta1)
        grid = rkhs.FrequencyGrid(n_emb, cfg.dt)
        table = stages.run("norms", rkhs.norm_table, basis, grid, sorted({l0, l1}))
        candidates = stages.run("select", selection.select_eigenfrequencies, table, sel_cfg, basis)
        target = series[emb.source_offset:]
        power = stages.run("baseline", baseline.harmonic_average, target, grid)
        cov = None
        if cfg.kernel == kern.COVARIANCE:
            cov = stages.run("covariance", baseline.covariance_rkhs_norms, emb.vectors, grid)
    notes.extend(str(w.message) for w in caught)
    for msg in notes:
        log.warning(msg)

    manifest = _manifest(cfg, series, gram, basis, sel_cfg, candidates, notes)
    result = RunResult(cfg, series, emb, gram, basis, table, sel_cfg, candidates, power, cov,
                       manifest, stages.timings)
    if write:
        write_outputs(result)
    return result


def _manifest(cfg, series, gram, basis, sel_cfg, candidates, notes) -> dict:
    config = cfg.to_dict()
    config.pop("output")
    residuals = None if basis.residuals is None else [float(r) for r in basis.residuals]
    return {
        "config": config,
        "derived": {
            "n_samples": int(series.shape[0]),
            "n_embedded": int(gram.n),
            "observation_dim": int(series.shape[1]),
            "epsilon": gram.spec.epsilon,
            "storage": gram.storage,
            "eigenpairs": basis.l,
            "l0": sel_cfg.l0,
            "l1": sel_cfg.l1,
            "lambda_first": float(basis.lambdas[0]),
            "lambda_last": float(basis.lambdas[-1]),
            "max_residual": None if residuals is None else max(residuals),
            "residuals": residuals,
            "selected": [c.omega for c in candidates],
        },
        "fingerprints": {"data_sha256": _sha256(series), "kernel": gram.fingerprint(),
                         "versions": _versions()},
        "notes": notes,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, np.integer)) else f"{v:.17g}" for v in row])


def surface_levels(l0: int, l1: int, count: int) -> list[int]:
    """``count`` truncation levels spread evenly over ``[l0, l1]``, deduplicated."""
    return sorted({int(round(v)) for v in np.linspace(l0, l1, count)})


def emit_plot_data(result: RunResult, directory) -> list[Path]:
    """Write the four panel bundles: series, w_l0, ratio, and the (omega, l, w) surface."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    cfg, table, sel = result.config, result.table, result.selection
    w0, w1 = table.w_at(sel.l0), table.w_at(sel.l1)
    r = selection.ratio(w0, w1)
    series = result.series
    paths = [out / "panel_a_series.csv", out / "panel_b_w_l0.csv",
             out / "panel_c_ratio.csv", out / "panel_d_surface.csv"]
    _write_rows(paths[0], ["t"] + [f"c{i}" for i in range(series.shape[1])],
                ([k * cfg.dt, *row] for k, row in enumerate(series)))
    _write_rows(paths[1], ["omega", "w_l0"], zip(table.omegas, w0))
    _write_rows(paths[2], ["omega", "ratio"], zip(table.omegas, r))
    levels = surface_levels(sel.l0, sel.l1, cfg.surface_points)
    rows = []
    for cand in result.candidates:
        row = table.grid.nearest(cand.omega)
        rows.extend((cand.omega, l, float(table.w_at(l)[row])) for l in levels)
    _write_rows(paths[3], ["omega", "l", "w"], rows)
    return paths


def write_outputs(result: RunResult) -> Path:
    out = Path(result.config.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / MANIFEST, result.manifest)
    _write_json(out / TIMINGS, {k: round(v, 6) for k, v in result.timings.items()})
    rkhs.write_norms_csv(out / "norms.csv", result.table, result.selection.l0, result.selection.l1)
    selection.write_candidates(out, result.candidates)
    baseline.write_power_csv(out / "power.csv", result.power)
    if result.covariance is not None:
        baseline.write_covariance_csv(out / "covariance_norms.csv", result.covariance)
    emit_plot_data(result, out / "plots")
    return out


def rebuild_operator(manifest_path) -> tuple[PipelineConfig, kern.GramOperator]:
    """Recreate the kernel operator of a finished run from its manifest."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    cfg = PipelineConfig.from_dict(manifest["config"]).resolved()
    cfg.epsilon = manifest["derived"]["epsilon"] if cfg.kernel != kern.COVARIANCE else "auto"
    series = load_series(cfg)
    if _sha256(series) != manifest["fingerprints"]["data_sha256"]:
        raise ConfigError(f"{manifest_path}: input data changed since the run")
    emb = embedding.delay_embed(series, cfg.delays)
    eps = None if cfg.epsilon == "auto" else cfg.epsilon
    gram = kern.build_gram(emb.vectors, KernelSpec(cfg.kernel, eps), cfg.storage, cfg.dense_limit)
    return cfg, gram
