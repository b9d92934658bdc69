"""Training loops for assimilation (Adam then L-BFGS) and causal prediction."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .balancing import BalancerState, relobralo_update, total_loss
from .constraints import (Box, ConstraintConfig, ConstraintFields, ObservationSet,
                          constrained_elevation, pretrain_constraints)
from .metrics import masked_ssp, ssp_2d
from .network import ModelConfig, PinnModel, eval_phi, init_model, save_model, save_nets
from .optim import AdamState, LbfgsState, adam_step, lbfgs_minimize
from .physics import (CollocationCounts, CollocationSets, ConfigError, Domain, data_mse,
                      evaluate_losses, sample_collocation)
from .wave_theory import SeaStateSpec, lwt_elevation, lwt_potential

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss; carries the partial report and last checkpoint."""

    def __init__(self, msg, report, checkpoint=None):
        super().__init__(msg)
        self.report = report
        self.checkpoint = checkpoint


@dataclass
class BalancerConfig:
    alpha: float = 0.95
    tau: float = 20.0
    expected_rho: float = 0.98
    fixed: bool = False


@dataclass
class SegmentConfig:
    """Causal segment schedule for prediction runs.

    Segment 1 spans [t_start, t_first]; the remaining segments split
    [t_first, t_end] evenly unless `segment_dt` fixes their length.
    """

    n_segments: int = 52
    epochs_per_segment: int = 750
    t_first: float = 0.945
    t_end: float = 2.145
    t_start: float = 0.0
    segment_dt: float | None = None
    refine_epochs: int = 6000
    total_epochs: int = 50000


@dataclass
class TrainConfig:
    scenario: str = "assimilation"
    adam_epochs: int = 3000
    lbfgs_epochs: int = 5000
    lr: float = 5e-4
    counts: CollocationCounts = field(default_factory=CollocationCounts)
    periodic: bool = False
    coupling: str = "partial"
    model: ModelConfig = field(default_factory=ModelConfig)
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    balancer: BalancerConfig = field(default_factory=BalancerConfig)
    lbfgs_history: int = 30
    lbfgs_reweight_every: int = 50
    segments: SegmentConfig | None = None
    seed: int = 0
    checkpoint_every: int = 1000
    checkpoint_dir: str | None = None
    log_path: str | None = None
    log_every: int = 0

    def validate(self):
        if self.scenario not in ("assimilation", "prediction"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "prediction" and self.segments is None:
            raise ConfigError("prediction runs need a segment schedule")
        if self.scenario == "prediction" and self.periodic:
            raise ConfigError("periodic losses apply to assimilation runs only")
        if self.adam_epochs < 0 or self.lbfgs_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.periodic and self.counts.n_periodic <= 0:
            raise ConfigError("periodic losses need n_periodic > 0")
        if self.coupling not in ("partial", "total"):
            raise ConfigError(f"unknown surface coupling {self.coupling!r}")

    def seeds(self) -> dict:
        s = int(self.seed)
        return {"model": s, "collocation": s + 1, "balancer": s + 2, "constraints": s + 3}


@dataclass
class Segment:
    index: int
    t_lo: float
    t_hi: float
    activation_epoch: int

    @property
    def duration(self) -> float:
        return self.t_hi - self.t_lo


def segment_schedule(config: SegmentConfig) -> list[Segment]:
    """Contiguous segments covering [t_start, t_end]; segment n activates at (n-1)*epochs_per_segment."""
    c = config
    if c.n_segments < 1 or c.epochs_per_segment < 0:
        raise ConfigError("need at least one segment")
    if not c.t_end > c.t_start:
        raise ConfigError("empty time window")
    if c.n_segments == 1:
        edges = [c.t_start, c.t_end]
    else:
        if not (c.t_start < c.t_first < c.t_end):
            raise ConfigError("first segment must end inside the time window")
        rest = c.n_segments - 1
        if c.segment_dt is not None:
            end = c.t_first + rest * c.segment_dt
            if not math.isclose(end, c.t_end, rel_tol=0, abs_tol=1e-9):
                raise ConfigError(
                    f"inconsistent totals: {c.t_first} + {rest} x {c.segment_dt} = {end:.6g}, "
                    f"window ends at {c.t_end}")
        later = np.linspace(c.t_first, c.t_end, rest + 1)
        edges = [c.t_start] + list(later)
        edges[-1] = c.t_end
    return [Segment(i + 1, float(edges[i]), float(edges[i + 1]), i * c.epochs_per_segment)
            for i in range(len(edges) - 1)]


# --------------------------------------------------------------------------- reporting

@dataclass
class TrainReport:
    components: list
    losses: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    total: list = field(default_factory=list)
    weighted_total: list = field(default_factory=list)
    mse_data: list = field(default_factory=list)
    stage: list = field(default_factory=list)
    active_points: list = field(default_factory=list)
    epochs: int = 0
    wall_time: float = 0.0
    termination: str = ""
    ssp: dict = field(default_factory=dict)
    pretrain_time: float = 0.0
    constraint_diagnostics: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)

    def __post_init__(self):
        for k in self.components:
            self.losses.setdefault(k, [])
            self.weights.setdefault(k, [])

    def record(self, stage, values: dict, weights, mse, active=None):
        for i, k in enumerate(self.components):
            self.losses[k].append(values[k])
            self.weights[k].append(float(weights[i]))
        self.total.append(float(sum(values.values())))
        self.weighted_total.append(float(sum(w * values[k] for w, k in zip(weights, self.components))))
        self.mse_data.append(float("nan") if mse is None else mse)
        self.stage.append(stage)
        if active is not None:
            self.active_points.append(active)
        self.epochs += 1

    @property
    def loss_drop(self) -> float:
        """Ratio of the first to the smallest unweighted total loss."""
        return self.total[0] / max(min(self.total), 1e-300)


class TrainingLog:
    """Line-oriented training log: a header line then one comma-separated record per epoch."""

    def __init__(self, path, components):
        self.path = Path(path) if path else None
        self.components = list(components)
        self._fh = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w")
            cols = ["epoch", "stage", "total"] + [f"L_{k}" for k in self.components] + \
                   [f"w_{k}" for k in self.components] + ["mse_data"]
            self._fh.write(",".join(cols) + "\n")

    def write(self, epoch, stage, values, weights, mse):
        if self._fh is None:
            return
        row = [str(epoch), stage, f"{sum(values.values()):.10e}"]
        row += [f"{values[k]:.10e}" for k in self.components]
        row += [f"{w:.10e}" for w in weights]
        row.append("nan" if mse is None else f"{mse:.10e}")
        self._fh.write(",".join(row) + "\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_training_log(path) -> dict:
    """Parse a training log back into column arrays (stage as strings)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for line in lines[1:]:
        for h, v in zip(header, line.split(",")):
            cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        out[h] = vals if h == "stage" else np.array(vals, dtype=float)
    return out


# --------------------------------------------------------------------------- ground truth

@dataclass
class GroundTruth:
    """Linear-theory reference on an evaluation grid, optionally masked."""

    spec: SeaStateSpec
    x: np.ndarray
    t: np.ndarray
    mask: np.ndarray | None = None

    def mesh(self):
        return np.meshgrid(np.asarray(self.x, float), np.asarray(self.t, float))

    def elevation(self):
        X, T = self.mesh()
        return lwt_elevation(self.spec, X, T)

    def surface_potential(self):
        X, T = self.mesh()
        return lwt_potential(self.spec, X, T, lwt_elevation(self.spec, X, T))


def predicted_fields(model: PinnModel, x, t):
    """Elevation and surface potential of a trained model on the (t, x) grid of x and t."""
    X, T = np.meshgrid(np.asarray(x, float), np.asarray(t, float))
    eta = constrained_elevation(model, model.constraints, X, T)
    phi = eval_phi(model, X, T, eta)
    return eta, phi


def score(model: PinnModel, truth: GroundTruth, gauge: str = "mean") -> dict:
    """SSP of elevation and surface potential against the reference.

    The potential is defined up to an additive constant; with ``gauge='mean'``
    both potentials are compared after removing their mean over the grid
    (or over the mask).
    """
    eta, phi = predicted_fields(model, truth.x, truth.t)
    eta_t = truth.elevation()
    phi_t = truth.surface_potential()
    sel = np.ones_like(eta, dtype=bool) if truth.mask is None else truth.mask
    if gauge == "mean":
        phi = phi - phi[sel].mean()
        phi_t = phi_t - phi_t[sel].mean()
    if truth.mask is None:
        return {"elevation": ssp_2d(eta_t, eta), "surface_potential": ssp_2d(phi_t, phi)}
    return {"elevation": masked_ssp(eta_t, eta, sel), "surface_potential": masked_ssp(phi_t, phi, sel)}


# --------------------------------------------------------------------------- loops

class _Run:
    """Shared training machinery for both scenarios."""

    def __init__(self, config: TrainConfig, observations: ObservationSet, domain: Domain,
                 model: PinnModel, constraints: ConstraintFields, colloc: CollocationSets,
                 report: TrainReport, segments: list[Segment] | None = None):
        self.c = config
        self.obs = observations
        self.domain = domain
        self.model = model
        self.constraints = constraints
        self.colloc = colloc
        self.report = report
        self.components = report.components
        self.params = model.parameters()
        self.segments = segments
        self.balancer = BalancerState(len(self.components), config.balancer.alpha, config.balancer.tau,
                                      config.balancer.expected_rho, config.seeds()["balancer"],
                                      fixed=config.balancer.fixed)
        self.log = TrainingLog(config.log_path, self.components)
        self.ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
        self.last_good = model.get_flat()
        self._active_cache: dict = {}
        self.epoch = 0

    def active_colloc(self) -> CollocationSets:
        if self.segments is None:
            return self.colloc
        n = sum(1 for s in self.segments if s.activation_epoch <= self.epoch)
        n = max(n, 1)
        if n not in self._active_cache:
            self._active_cache[n] = self.colloc.active(n)
        return self._active_cache[n]

    def losses(self, flat=None):
        if flat is not None:
            self.model.set_flat(flat)
        colloc = self.active_colloc()
        bundle = evaluate_losses(self.model, self.constraints, colloc, self.domain,
                                 self.c.periodic, self.c.coupling)
        return bundle, colloc

    def checkpoint(self, tag: str):
        if self.ckpt_dir is None:
            return
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        path = self.ckpt_dir / f"ckpt_{tag}"
        save_checkpoint(path, self.model, {"epoch": self.epoch, "tag": tag})
        self.report.checkpoints.append(str(path))

    def _record(self, stage, values, weights, colloc):
        mse = data_mse(self.model, self.constraints, self.obs)
        active = (colloc.x_s.size, colloc.x_b.size, colloc.x_l.size)
        self.report.record(stage, values, weights, mse, active)
        self.log.write(self.epoch, stage, values, weights, mse)
        if self.c.log_every and self.epoch % self.c.log_every == 0:
            log.info("epoch %d %s total=%.3e mse_data=%.2e", self.epoch, stage, sum(values.values()), mse)

    def _abort(self, exc):
        self.model.set_flat(self.last_good)
        ckpt = self.report.checkpoints[-1] if self.report.checkpoints else None
        self.log.close()
        raise TrainingAborted(f"training aborted at epoch {self.epoch}: {exc}", self.report, ckpt) from exc

    def adam(self, n_epochs: int, adam: AdamState, stage: str = "adam"):
        flat = self.model.get_flat()
        for _ in range(n_epochs):
            try:
                bundle, colloc = self.losses()
                values = bundle.values()
                w = relobralo_update(self.balancer, [values[k] for k in self.components])
                total = total_loss(w, [bundle.components[k] for k in self.components])
                g = ad.param_gradient(total, self.params).vector
            except (ad.NumericError, FloatingPointError) as exc:
                self._abort(exc)
            self.last_good = flat
            self._record(stage, values, w, colloc)
            flat = adam_step(adam, flat, g)
            self.model.set_flat(flat)
            self.epoch += 1
            if self.c.checkpoint_every and self.epoch % self.c.checkpoint_every == 0:
                self.checkpoint(str(self.epoch))
        return adam

    def lbfgs(self, max_iters: int):
        if max_iters <= 0:
            return "max_iters"
        state = LbfgsState(history=self.c.lbfgs_history)
        weights = np.array(self.balancer.weights, dtype=float)
        seen: dict = {}

        def objective(flat):
            bundle, colloc = self.losses(flat)
            comps = [bundle.components[k] for k in self.components]
            total = total_loss(weights, comps)
            g = ad.param_gradient(total, self.params).vector
            f = float(total.value)
            seen[f] = (bundle.values(), colloc)
            return f, g

        done = 0
        reason = "max_iters"
        flat = self.model.get_flat()
        while done < max_iters:
            chunk = min(self.c.lbfgs_reweight_every or max_iters, max_iters - done)
            start_iter = state.n_iter

            def callback(st, x):
                values, colloc = seen.get(st.f, (None, None))
                if values is None:
                    values, colloc = self.losses(x)[0].values(), self.active_colloc()
                seen.clear()
                self.model.set_flat(x)
                relobralo_update(self.balancer, [values[k] for k in self.components])
                self._record("lbfgs", values, weights, colloc)
                self.last_good = x
                self.epoch += 1
                if self.c.checkpoint_every and self.epoch % self.c.checkpoint_every == 0:
                    self.checkpoint(str(self.epoch))
                return False

            try:
                flat, reason = lbfgs_minimize(state, objective, flat, chunk, callback)
            except (ad.NumericError, FloatingPointError) as exc:
                self._abort(exc)
            done += state.n_iter - start_iter
            self.model.set_flat(flat)
            if reason != "max_iters":
                break
            # refresh the objective's weights from the balancer and restart the line-search baseline
            weights[:] = self.balancer.weights
            state.invalidate()
        return reason

    def finish(self, reason, t0, truth):
        self.report.wall_time = time.perf_counter() - t0
        self.report.termination = reason
        self.checkpoint("final")
        self.log.close()
        if truth is not None:
            self.report.ssp = score(self.model, truth)
        return self.model, self.report


def _components(periodic: bool) -> list:
    return ["lap", "kin", "dyn", "bot"] + (["pb_eta", "pb_phi"] if periodic else [])


def _prepare(config: TrainConfig, observations: ObservationSet, domain: Domain, constraints):
    seeds = config.seeds()
    t0 = time.perf_counter()
    box = Box(domain.x, domain.t)
    if constraints is None:
        constraints = pretrain_constraints(observations, box, seeds["constraints"], config.constraint)
    pre = time.perf_counter() - t0
    model = init_model(domain.ranges, config.model, seeds["model"])
    model.constraints = constraints
    return model, constraints, pre


def run_assimilation(config: TrainConfig, observations: ObservationSet, domain: Domain,
                     ground_truth: GroundTruth | None = None,
                     constraints: ConstraintFields | None = None) -> tuple[PinnModel, TrainReport]:
    """Pre-train the measurement constraint, then Adam followed by L-BFGS."""
    config.validate()
    if config.scenario != "assimilation":
        raise ConfigError("run_assimilation needs scenario 'assimilation'")
    t0 = time.perf_counter()
    model, constraints, pre = _prepare(config, observations, domain, constraints)
    colloc = sample_collocation(domain, config.counts, config.seeds()["collocation"])
    report = TrainReport(_components(config.periodic), pretrain_time=pre,
                         constraint_diagnostics=dict(constraints.diagnostics))
    run = _Run(config, observations, domain, model, constraints, colloc, report)
    run.checkpoint("init")
    run.adam(config.adam_epochs, AdamState(lr=config.lr))
    run.checkpoint("adam_end")
    reason = run.lbfgs(config.lbfgs_epochs)
    return run.finish(reason, t0, ground_truth)


def run_prediction(config: TrainConfig, observations: ObservationSet, domain: Domain,
                   ground_truth: GroundTruth | None = None,
                   constraints: ConstraintFields | None = None) -> tuple[PinnModel, TrainReport]:
    """Causal training: segment n's collocation points join the losses at its activation epoch."""
    config.validate()
    if config.scenario != "prediction":
        raise ConfigError("run_prediction needs scenario 'prediction'")
    if domain.region is None:
        raise ConfigError("prediction runs need a prediction region")
    sc = config.segments
    segments = segment_schedule(sc)
    if observations.t.max() > segments[0].t_hi + 1e-9:
        raise ConfigError("observations must lie inside the first segment")
    t0 = time.perf_counter()
    model, constraints, pre = _prepare(config, observations, domain, constraints)
    colloc = sample_collocation(domain, config.counts, config.seeds()["collocation"],
                                [(s.t_lo, s.t_hi) for s in segments])
    report = TrainReport(_components(False), pretrain_time=pre,
                         constraint_diagnostics=dict(constraints.diagnostics))
    run = _Run(config, observations, domain, model, constraints, colloc, report, segments)
    run.checkpoint("init")
    adam = AdamState(lr=config.lr)
    run.adam(sc.n_segments * sc.epochs_per_segment, adam, "adam")
    run.adam(sc.refine_epochs, adam, "refine")
    run.checkpoint("adam_end")
    reason = run.lbfgs(max(sc.total_epochs - run.epoch, 0))
    return run.finish(reason, t0, ground_truth)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: PinnModel, meta: dict | None = None) -> None:
    """Model and (if present) frozen constraint networks in one checkpoint."""
    nets = {"eta": model.eta_net, "phi": model.phi_net}
    c = getattr(model, "constraints", None)
    meta = dict(meta or {})
    meta["seed"] = model.seed
    if c is not None:
        from .constraints import ClampedNet
        if hasattr(c.M, "config") and isinstance(c.R, ClampedNet):
            nets["M"] = c.M
            nets["R"] = c.R.net
            meta["constraints"] = c.to_dict()
    save_nets(path, nets, meta)


def load_checkpoint(path) -> tuple[PinnModel, dict]:
    from .constraints import ClampedNet
    from .network import load_nets
    nets, meta = load_nets(path)
    model = PinnModel(nets["eta"], nets["phi"], meta.get("seed"))
    model.constraints = None
    if "M" in nets:
        box = meta.get("constraints", {}).get("box")
        model.constraints = ConstraintFields(nets["M"], ClampedNet(nets["R"]),
                                             Box(tuple(box["x"]), tuple(box["t"])) if box else None,
                                             meta.get("constraints", {}).get("diagnostics"))
    return model, meta
