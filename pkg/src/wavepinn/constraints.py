"""Measurement hard constraint: eta_tilde = M + R * N.

M is a smooth extension of the measured elevations and R a smooth distance
function that vanishes on the measurement points.  Both are small tanh nets
fitted once before the main training and then frozen, so the composed
elevation reproduces the data regardless of the elevation network N.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Jet, Layout, VALUE_ONLY
from .network import FieldNet, PinnModel, Ranges
from .optim import AdamState, LbfgsState, adam_step, lbfgs_minimize
from .wave_theory import DomainError


class ConstraintPretrainingError(RuntimeError):
    """Pre-training stopped short of the data-fit thresholds."""

    def __init__(self, msg, m_error: float, r_max: float):
        super().__init__(msg)
        self.m_error = m_error
        self.r_max = r_max


class FrozenStateError(RuntimeError):
    pass


@dataclass
class ObservationSet:
    """Measured elevations eta at scattered (x, t) points.

    ``kind`` is 'buoys' (time series at fixed positions), 'snapshots' (spatial
    profiles at fixed times) or 'scattered'.
    """

    x: np.ndarray
    t: np.ndarray
    eta: np.ndarray
    kind: str = "scattered"
    positions: tuple = ()
    times: tuple = ()

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.eta = np.asarray(self.eta, dtype=float).reshape(-1)
        if not (self.x.size == self.t.size == self.eta.size):
            raise ValueError("observation arrays differ in length")
        if self.x.size == 0:
            raise DomainError("empty observation set")
        for a in (self.x, self.t, self.eta):
            if not np.all(np.isfinite(a)):
                raise DomainError("non-finite observation")
        if self.kind not in ("buoys", "snapshots", "scattered"):
            raise ValueError(f"unknown observation kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def eta_max(self) -> float:
        return float(np.max(np.abs(self.eta)))


@dataclass(frozen=True)
class Box:
    """Axis-aligned (x, t) rectangle."""

    x: tuple[float, float]
    t: tuple[float, float]

    @property
    def ranges(self) -> Ranges:
        return Ranges(self.x, self.t)

    def normalize(self, x, t):
        xh = 2 * (np.asarray(x, dtype=float) - self.x[0]) / (self.x[1] - self.x[0]) - 1
        th = 2 * (np.asarray(t, dtype=float) - self.t[0]) / (self.t[1] - self.t[0]) - 1
        return xh, th

    def grid(self, n: int = 101):
        xs = np.linspace(*self.x, n)
        ts = np.linspace(*self.t, n)
        X, T = np.meshgrid(xs, ts)
        return X.ravel(), T.ravel()


class DistanceField:
    """Normalised minimum distance to the observation points in (x_hat, t_hat)."""

    def __init__(self, observations: ObservationSet, box: Box, reference_n: int = 201):
        self.box = box
        xh, th = box.normalize(observations.x, observations.t)
        self.tree = cKDTree(np.column_stack([xh, th]))
        rx, rt = box.grid(reference_n)
        self.scale = float(self._raw(rx, rt).max())
        if self.scale <= 0:
            raise DomainError("observations cover the whole reference sampling")

    def _raw(self, x, t):
        xh, th = self.box.normalize(x, t)
        d, _ = self.tree.query(np.column_stack([np.ravel(xh), np.ravel(th)]))
        return d

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.clip(self._raw(x, t) / self.scale, 0.0, 1.0).reshape(np.shape(x))


def raw_distance(x, t, observations: ObservationSet, box: Box) -> np.ndarray:
    return DistanceField(observations, box)(x, t)


# --------------------------------------------------------------------------- frozen fields

class ConstantField:
    """Field with a constant value; all derivatives zero."""

    def __init__(self, c: float):
        self.c = float(c)

    def jets(self, coords, layout: Layout) -> Jet:
        n = coords[0].data.shape[1]
        out = np.zeros((layout.size, n, 1))
        out[0] = self.c
        return Jet(ad.Var(out), layout)


class FunctionField:
    """Field from a vectorised f(x, t); derivatives supplied optionally as a dict of callables."""

    def __init__(self, fn, derivatives: dict | None = None):
        self.fn = fn
        self.derivatives = derivatives or {}

    def jets(self, coords, layout: Layout) -> Jet:
        x = coords[0].data[0, :, 0]
        t = coords[1].data[0, :, 0]
        out = np.zeros((layout.size, x.size, 1))
        out[0, :, 0] = self.fn(x, t)
        names = list(layout.first) + [d + d for d in layout.second]
        for i, name in enumerate(names, start=1):
            if name not in self.derivatives:
                raise ValueError(f"FunctionField has no '{name}' derivative")
            out[i, :, 0] = self.derivatives[name](x, t)
        return Jet(ad.Var(out), layout)


class ClampedNet:
    """A FieldNet whose output is clamped to [lo, hi]; clamped points get zero derivatives."""

    def __init__(self, net: FieldNet, lo=0.0, hi=1.0):
        self.net = net
        self.lo, self.hi = lo, hi

    def jets(self, coords, layout: Layout) -> Jet:
        out = self.net.jets(coords, layout).data.copy()
        low = out[0] < self.lo
        high = out[0] > self.hi
        for s in range(1, layout.size):
            out[s][low | high] = 0.0
        out[0] = np.clip(out[0], self.lo, self.hi)
        return Jet(ad.Var(out), layout)

    def parameters(self):
        return self.net.parameters()


def _field_eval(field_, x, t, layout: Layout) -> np.ndarray:
    with ad.no_grad():
        coords = (ad.seed(x, "x", layout), ad.seed(t, "t", layout))
        return field_.jets(coords, layout).data


class ConstraintFields:
    """Frozen M and R fields with a small cache of their jets on fixed point sets."""

    def __init__(self, M, R, box: Box | None = None, diagnostics: dict | None = None):
        self.M = M
        self.R = R
        self.box = box
        self.frozen = True
        self.diagnostics = diagnostics or {}
        self._cache: dict = {}

    def parameters(self) -> list:
        ps = []
        for f in (self.M, self.R):
            if hasattr(f, "parameters"):
                ps += f.parameters()
        return ps

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def jets(self, x, t, layout: Layout) -> tuple[np.ndarray, np.ndarray]:
        """(M, R) jet arrays of shape (S, N, 1) at the points (x, t)."""
        if not self.frozen:
            raise FrozenStateError("constraint fields must be frozen before use")
        key = (id(x), id(t), layout)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is x and hit[1] is t:
            return hit[2], hit[3]
        m = _field_eval(self.M, x, t, layout)
        r = _field_eval(self.R, x, t, layout)
        if isinstance(x, np.ndarray) and isinstance(t, np.ndarray):
            if len(self._cache) > 32:
                self._cache.clear()
            self._cache[key] = (x, t, m, r)
        return m, r

    def values(self, x, t):
        m, r = self.jets(np.asarray(x, dtype=float).reshape(-1), np.asarray(t, dtype=float).reshape(-1), VALUE_ONLY)
        return m[0, :, 0], r[0, :, 0]

    def to_dict(self) -> dict:
        return {"box": None if self.box is None else {"x": list(self.box.x), "t": list(self.box.t)},
                "diagnostics": self.diagnostics}


def constrained_jets(model: PinnModel, constraints: ConstraintFields | None, x, t, layout: Layout) -> Jet:
    """Jet of eta_tilde = M + R * N at points (x, t)."""
    n = model.eta_jets(x, t, layout)
    if constraints is None:
        return n
    m, r = constraints.jets(x, t, layout)
    return Jet(ad.add(ad.jet_mul(Jet(ad.Var(r), layout), n).var, m), layout)


def constrained_elevation(model: PinnModel, constraints: ConstraintFields | None, x, t) -> np.ndarray:
    """Plain values of eta_tilde."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    xf = x.reshape(-1)
    tf = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(-1)
    nv = model.eta_net(xf, tf)
    if constraints is None:
        return nv.reshape(shape)
    m, r = constraints.values(xf, tf)
    return (m + r * nv).reshape(shape)


# --------------------------------------------------------------------------- pre-training

@dataclass
class ConstraintConfig:
    hidden_layers: int = 2
    width: int = 50
    adam_epochs: int = 2000
    lr: float = 1e-3
    polish_iters: int = 1000
    n_dense: int = 2000
    m_tol: float = 0.02
    r_tol: float = 0.05
    r_target: str = "squared"


def _fit(net: FieldNet, x, t, target, cfg: ConstraintConfig, norm: float = 1.0) -> float:
    """Least-squares fit of `net` to target values: Adam, then an L-BFGS polish.

    The misfit is measured in units of `norm`, which keeps the cost O(1).
    """
    params = net.parameters()
    w = 1.0 / norm ** 2

    def objective(flat):
        ad.assign_params(params, flat)
        out = net.jets((ad.seed(x, "x", VALUE_ONLY), ad.seed(t, "t", VALUE_ONLY)), VALUE_ONLY)
        res = out.var[0, :, 0] - target
        loss = ad.mean(ad.square(res)) * w
        g = ad.param_gradient(loss, params).vector
        return float(loss.value), g

    flat = ad.flatten_params(params)
    adam = AdamState(lr=cfg.lr, amsgrad=False)
    f = np.inf
    for _ in range(cfg.adam_epochs):
        f, g = objective(flat)
        flat = adam_step(adam, flat, g)
    if cfg.polish_iters:
        flat, _ = lbfgs_minimize(LbfgsState(), objective, flat, cfg.polish_iters)
    f, _ = objective(flat)
    ad.assign_params(params, flat)
    return f


def pretrain_constraints(observations: ObservationSet, box: Box, seed: int = 0,
                         config: ConstraintConfig | None = None, check: bool = True) -> ConstraintFields:
    """Fit and freeze M (data extension) and R (distance function).

    Raises ConstraintPretrainingError when the fitted fields miss the thresholds
    |M - eta_m| <= m_tol * max|eta_m| and R <= r_tol on the data points.
    """
    cfg = config or ConstraintConfig()
    rng = np.random.default_rng(seed)
    obs = observations
    scale = obs.eta_max if obs.eta_max > 0 else 1.0
    m_net = FieldNet(box.ranges, cfg.hidden_layers, cfg.width, 0, rng, output_scale=scale, name="M")
    _fit(m_net, obs.x, obs.t, obs.eta, cfg, norm=scale)

    dist = DistanceField(obs, box)
    rx = rng.uniform(*box.x, cfg.n_dense)
    rt = rng.uniform(*box.t, cfg.n_dense)
    gx, gt = box.grid(21)
    rx = np.concatenate([rx, gx, obs.x])
    rt = np.concatenate([rt, gt, obs.t])
    r_target = dist(rx, rt)
    if cfg.r_target == "squared":
        r_target = r_target ** 2
    elif cfg.r_target != "distance":
        raise ValueError(f"unknown r_target {cfg.r_target!r}")
    r_net = FieldNet(box.ranges, cfg.hidden_layers, cfg.width, 0, rng, name="R")
    _fit(r_net, rx, rt, r_target, cfg)

    fields = ConstraintFields(m_net, ClampedNet(r_net), box)
    m_vals, r_vals = fields.values(obs.x, obs.t)
    m_err = float(np.max(np.abs(m_vals - obs.eta)))
    r_max = float(np.max(r_vals))
    fields.diagnostics = {"m_max_error": m_err, "m_rel_error": m_err / scale, "r_max_at_data": r_max,
                          "r_target": cfg.r_target}
    if check and (m_err > cfg.m_tol * scale or r_max > cfg.r_tol):
        raise ConstraintPretrainingError(
            f"constraint pre-training missed thresholds: max|M - eta_m| = {m_err:.3g} "
            f"(limit {cfg.m_tol * scale:.3g}), max R at data = {r_max:.3g} (limit {cfg.r_tol})",
            m_err, r_max)
    return fields
