"""Field files, observation tables, synthetic data and run configuration.

Field file layout: one line of UTF-8 JSON metadata terminated by a newline,
followed directly by the payload of ``nt * nx`` little-endian float64 values
in t-major order (all x for the first time, then the next time, ...).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .constraints import ConstraintConfig, ObservationSet
from .metrics import GridField
from .network import ModelConfig
from .physics import CollocationCounts, ConfigError
from .trainer import BalancerConfig, SegmentConfig, TrainConfig
from .wave_theory import (DomainError, JonswapSpec, PredictionRegion, SeaStateSpec, lwt_elevation,
                          lwt_potential, solve_dispersion, reference_sea, REFERENCE_DEPTH, GRAVITY)

FIELD_MAGIC = "wavepinn-field"


# --------------------------------------------------------------------------- field files

def save_field(path, f: GridField, provenance: str = "") -> None:
    meta = {"format": FIELD_MAGIC, "version": 1, "nx": f.nx, "nt": f.nt,
            "x0": f.x0, "dx": f.dx, "t0": f.t0, "dt": f.dt,
            "quantity": f.quantity, "units": f.units, "provenance": provenance,
            "dtype": "<f8", "order": "t-major"}
    meta.update({k: v for k, v in f.meta.items() if k not in meta})
    header = json.dumps(meta, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(payload)


def load_field(path) -> GridField:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ConfigError(f"{path}: missing metadata line")
    try:
        meta = json.loads(raw[:nl].decode("utf-8"))
    except ValueError as exc:
        raise ConfigError(f"{path}: unreadable metadata ({exc})") from exc
    if meta.get("format") != FIELD_MAGIC:
        raise ConfigError(f"{path}: not a field file")
    nx, nt = int(meta["nx"]), int(meta["nt"])
    payload = raw[nl + 1:]
    if len(payload) != nx * nt * 8:
        raise ConfigError(f"{path}: payload has {len(payload)} bytes, expected {nx * nt * 8}")
    values = np.frombuffer(payload, dtype="<f8").reshape(nt, nx).astype(float)
    extra = {k: v for k, v in meta.items()
             if k not in ("format", "version", "nx", "nt", "x0", "dx", "t0", "dt", "quantity", "units",
                          "dtype", "order")}
    return GridField(values, meta["x0"], meta["dx"], meta["t0"], meta["dt"],
                     meta.get("quantity", "elevation"), meta.get("units", "m"), extra)


def export_field_table(path, f: GridField) -> None:
    """Text table with header ``x,t,value``; one row per grid node, t-major."""
    X, T = f.mesh()
    data = np.column_stack([X.ravel(), T.ravel(), f.values.ravel()])
    np.savetxt(path, data, delimiter=",", header="x,t,value", comments="", fmt="%.17g")


def import_field_table(path, quantity: str = "elevation", units: str = "m") -> GridField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs = np.unique(data[:, 0])
    ts = np.unique(data[:, 1])
    if xs.size * ts.size != data.shape[0]:
        raise ConfigError(f"{path}: rows do not form a complete grid")
    vals = np.empty((ts.size, xs.size))
    ix = np.searchsorted(xs, data[:, 0])
    it = np.searchsorted(ts, data[:, 1])
    vals[it, ix] = data[:, 2]
    dx, dt = np.diff(xs), np.diff(ts)
    if not (np.allclose(dx, dx[0], rtol=1e-6) and np.allclose(dt, dt[0], rtol=1e-6)):
        raise ConfigError(f"{path}: grid is not uniform")
    return GridField(vals, xs[0], float(dx.mean()), ts[0], float(dt.mean()), quantity, units)


# --------------------------------------------------------------------------- observations

def write_observations(path, obs: ObservationSet) -> None:
    data = np.column_stack([obs.x, obs.t, obs.eta])
    np.savetxt(path, data, delimiter=",", header="x,t,eta", comments="", fmt="%.17g")


def infer_kind(x, t) -> str:
    ux, ut = np.unique(x), np.unique(t)
    if ux.size * ut.size == x.size:
        return "buoys" if ux.size <= ut.size else "snapshots"
    return "scattered"


def read_observations(path, kind: str | None = None) -> ObservationSet:
    lines = Path(path).read_text().splitlines()
    if not lines or [h.strip() for h in lines[0].split(",")] != ["x", "t", "eta"]:
        raise ConfigError(f"{path}: expected header 'x,t,eta'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ConfigError(f"{path}: expected three columns")
    x, t, eta = data.T
    kind = kind or infer_kind(x, t)
    positions = tuple(np.unique(x)) if kind == "buoys" else ()
    times = tuple(np.unique(t)) if kind == "snapshots" else ()
    return ObservationSet(x, t, eta, kind, positions, times)


# --------------------------------------------------------------------------- synthetic data

@dataclass
class Grid:
    x0: float
    x1: float
    dx: float
    t0: float
    t1: float
    dt: float

    @property
    def x(self) -> np.ndarray:
        n = int(round((self.x1 - self.x0) / self.dx)) + 1
        return self.x0 + self.dx * np.arange(n)

    @property
    def t(self) -> np.ndarray:
        n = int(round((self.t1 - self.t0) / self.dt)) + 1
        return self.t0 + self.dt * np.arange(n)


def nyquist_ok(spec: SeaStateSpec, grid: Grid) -> bool:
    if not spec.components:
        return True
    l_min = min(c.wavelength for c in spec.components)
    t_min = min(c.period for c in spec.components)
    return grid.dx <= l_min / 2 and grid.dt <= t_min / 2


def synth(spec: SeaStateSpec, grid: Grid, z_slices=(), surface_potential: bool = False) -> dict:
    """Linear-theory ground truth on a grid: elevation, optional potential slices."""
    x, t = grid.x, grid.t
    X, T = np.meshgrid(x, t)
    flag = {"nyquist_ok": nyquist_ok(spec, grid)}
    out = {"elevation": GridField(lwt_elevation(spec, X, T), x[0], grid.dx, t[0], grid.dt,
                                  "elevation", "m", dict(flag))}
    for z in z_slices:
        out[f"potential_z{z:g}"] = GridField(lwt_potential(spec, X, T, np.full_like(X, z)), x[0], grid.dx,
                                             t[0], grid.dt, "potential", "m^2/s", dict(flag, z=float(z)))
    if surface_potential:
        eta = out["elevation"].values
        out["surface_potential"] = GridField(lwt_potential(spec, X, T, eta), x[0], grid.dx, t[0], grid.dt,
                                             "surface_potential", "m^2/s", dict(flag))
    return out


def _nearest(axis: np.ndarray, targets, name: str) -> np.ndarray:
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    step = axis[1] - axis[0]
    lo, hi = axis[0] - 0.5 * step, axis[-1] + 0.5 * step
    bad = (targets < lo) | (targets > hi)
    if np.any(bad):
        raise DomainError(f"{name} {targets[bad].tolist()} outside [{axis[0]}, {axis[-1]}]")
    return np.clip(np.rint((targets - axis[0]) / step).astype(int), 0, axis.size - 1)


def extract_buoys(f: GridField, positions) -> ObservationSet:
    """Full time series at the grid columns nearest to `positions`."""
    cols = _nearest(f.x, positions, "buoy position")
    t = f.t
    xs = np.concatenate([np.full(f.nt, f.x[c]) for c in cols])
    ts = np.tile(t, cols.size)
    eta = np.concatenate([f.values[:, c] for c in cols])
    return ObservationSet(xs, ts, eta, "buoys", tuple(float(f.x[c]) for c in cols))


def extract_snapshots(f: GridField, times, x_range=None) -> ObservationSet:
    """Spatial profiles at the grid rows nearest to `times`, optionally truncated to `x_range`."""
    rows = _nearest(f.t, times, "snapshot time")
    x = f.x
    keep = np.ones(f.nx, dtype=bool) if x_range is None else \
        (x >= x_range[0] - 1e-12) & (x <= x_range[1] + 1e-12)
    if not keep.any():
        raise DomainError("snapshot x-range selects no grid points")
    xs = np.tile(x[keep], rows.size)
    ts = np.concatenate([np.full(keep.sum(), f.t[r]) for r in rows])
    eta = np.concatenate([f.values[r, keep] for r in rows])
    return ObservationSet(xs, ts, eta, "snapshots", times=tuple(float(f.t[r]) for r in rows))


# --------------------------------------------------------------------------- run configuration

@dataclass
class SeaConfig:
    depth: float = REFERENCE_DEPTH
    gravity: float = GRAVITY
    reference_rows: list | None = None
    components: list | None = None
    scale: float = 1.0

    def build(self) -> SeaStateSpec:
        if (self.reference_rows is None) == (self.components is None):
            raise ConfigError("sea needs exactly one of reference_rows or components")
        if self.reference_rows is not None:
            rows = [int(r) for r in self.reference_rows]
            if any(r not in (0, 1, 2) for r in rows):
                raise ConfigError("reference_rows entries must be 0, 1 or 2")
            spec = reference_sea(rows, self.depth)
            if self.gravity != GRAVITY:
                spec = SeaStateSpec.from_frequencies(spec.omegas, spec.amplitudes, spec.phases,
                                                     self.depth, self.gravity)
        else:
            omegas, amps, phases = [], [], []
            for i, c in enumerate(self.components):
                extra = set(c) - {"amplitude", "period", "omega", "phase"}
                if extra:
                    raise ConfigError(f"sea.components[{i}]: unknown keys {sorted(extra)}")
                if ("period" in c) == ("omega" in c):
                    raise ConfigError(f"sea.components[{i}]: give exactly one of period or omega")
                omegas.append(float(c["omega"]) if "omega" in c else 2 * math.pi / float(c["period"]))
                amps.append(float(c["amplitude"]))
                phases.append(float(c.get("phase", 0.0)))
            spec = SeaStateSpec.from_frequencies(omegas, amps, phases, self.depth, self.gravity)
        return spec.scaled(self.scale) if self.scale != 1.0 else spec


@dataclass
class DomainConfig:
    x: list = field(default_factory=lambda: [0.0, 50.0])
    t: list = field(default_factory=lambda: [0.0, 15.0])
    headroom: float = 1.1


@dataclass
class ObservationConfig:
    kind: str = "buoys"
    file: str | None = None
    positions: list = field(default_factory=lambda: [0.0, 25.0, 50.0])
    times: list = field(default_factory=list)
    x_range: list | None = None
    dx: float = 0.5
    dt: float = 0.1


@dataclass
class RegionConfig:
    x_offset_left: float = 0.0
    x_extent_right: float = 4.0
    cg_high: float | None = None
    cg_low: float | None = None
    peak_period: float | None = None
    gamma: float = 3.3
    depth: float | None = None
    fraction: float = 0.05

    def build(self, t_max: float, t_min: float = 0.0, sea_depth: float | None = None) -> PredictionRegion:
        if self.cg_high is not None and self.cg_low is not None:
            return PredictionRegion(self.cg_high, self.cg_low, self.x_offset_left, self.x_extent_right,
                                    t_max, t_min)
        if self.peak_period is None:
            raise ConfigError("region needs cg_high/cg_low or a peak_period")
        depth = self.depth if self.depth is not None else sea_depth
        spec = JonswapSpec(self.peak_period, self.gamma, hs=1.0, depth=depth)
        return PredictionRegion.from_spectrum(spec, self.fraction, self.x_offset_left, self.x_extent_right,
                                              t_max, t_min)


@dataclass
class TrainingSection:
    adam_epochs: int = 3000
    lbfgs_epochs: int = 5000
    lr: float = 5e-4
    periodic: bool = False
    coupling: str = "partial"
    lbfgs_history: int = 30
    lbfgs_reweight_every: int = 50
    checkpoint_every: int = 1000


@dataclass
class EvaluationConfig:
    dx: float = 0.5
    dt: float = 0.1


@dataclass
class RunConfig:
    scenario: str = "assimilation"
    seed: int = 0
    sea: SeaConfig = field(default_factory=SeaConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    observations: ObservationConfig = field(default_factory=ObservationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    collocation: CollocationCounts = field(default_factory=CollocationCounts)
    balancer: BalancerConfig = field(default_factory=BalancerConfig)
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    segments: SegmentConfig | None = None
    region: RegionConfig | None = None
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str | None = None

    SECTIONS = {"sea": SeaConfig, "domain": DomainConfig, "observations": ObservationConfig,
                "model": ModelConfig, "training": TrainingSection, "collocation": CollocationCounts,
                "balancer": BalancerConfig, "constraint": ConstraintConfig, "segments": SegmentConfig,
                "region": RegionConfig, "evaluation": EvaluationConfig}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("run configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            section = cls.SECTIONS.get(key)
            kwargs[key] = _build_section(section, value, key) if section is not None and value is not None else value
        try:
            cfg = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self):
        if self.scenario not in ("assimilation", "prediction"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "prediction" and (self.segments is None or self.region is None):
            raise ConfigError("prediction runs need 'segments' and 'region' sections")
        if self.observations.kind not in ("buoys", "snapshots", "scattered"):
            raise ConfigError(f"unknown observation kind {self.observations.kind!r}")
        self.sea.build()
        self.train_config().validate()

    def train_config(self, checkpoint_dir=None, log_path=None) -> TrainConfig:
        tr = self.training
        return TrainConfig(scenario=self.scenario, adam_epochs=tr.adam_epochs, lbfgs_epochs=tr.lbfgs_epochs,
                           lr=tr.lr, counts=self.collocation, periodic=tr.periodic, coupling=tr.coupling,
                           model=self.model, constraint=self.constraint, balancer=self.balancer,
                           lbfgs_history=tr.lbfgs_history, lbfgs_reweight_every=tr.lbfgs_reweight_every,
                           segments=self.segments, seed=self.seed, checkpoint_every=tr.checkpoint_every,
                           checkpoint_dir=checkpoint_dir, log_path=log_path)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build_section(cls, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    try:
        return cls(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{name}': {exc}") from exc


def load_run_config(path) -> RunConfig:
    import yaml

    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return RunConfig.from_dict(doc or {})
