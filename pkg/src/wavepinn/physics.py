"""Collocation sets and the potential-flow residual losses.

Losses are built from jets, so each returns a tape node whose reverse sweep
gives parameter gradients.  A "model" here is anything exposing
``eta_jets(x, t, layout)`` and ``phi_jets(x, t, z, layout)``; that covers the
trainable :class:`PinnModel` and the analytic :class:`LinearWaveFields`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, Layout, VALUE_ONLY
from .constraints import ConstraintFields, ObservationSet, constrained_jets
from .network import Ranges
from .wave_theory import GRAVITY, DomainError, PredictionRegion, SeaStateSpec

SURFACE_ETA = Layout(("x", "t"))
SURFACE_PHI = Layout(("x", "t", "z"))
BOTTOM_PHI = Layout(("z",))
LAPLACE_PHI = Layout(("x", "z"), ("x", "z"))

COMPONENTS = ("lap", "kin", "dyn", "bot", "pb_eta", "pb_phi")


class ConfigError(ValueError):
    """Inconsistent configuration."""


@dataclass(frozen=True)
class Domain:
    """Computational domain over a static (x, t) box; `z_top` caps the z-sampling range.

    With a `region`, collocation points are restricted to the sheared
    prediction region inside the box.
    """

    x: tuple[float, float]
    t: tuple[float, float]
    depth: float
    z_top: float
    gravity: float = GRAVITY
    region: PredictionRegion | None = None

    def __post_init__(self):
        if not (self.x[1] > self.x[0] and self.t[1] > self.t[0]):
            raise DomainError("empty (x, t) box")
        if not self.depth > 0:
            raise DomainError("depth must be positive")
        if not self.z_top > -self.depth:
            raise DomainError("z_top must lie above the bed")

    @property
    def ranges(self) -> Ranges:
        return Ranges(self.x, self.t, (-self.depth, self.z_top))

    @classmethod
    def for_observations(cls, x, t, depth, observations: ObservationSet, gravity=GRAVITY,
                         region=None, headroom: float = 1.1):
        return cls(tuple(x), tuple(t), depth, headroom * observations.eta_max, gravity, region)


@dataclass
class CollocationCounts:
    n_surface: int = 1000
    n_bottom: int = 300
    n_laplace: int = 4000
    n_periodic: int = 0

    def __post_init__(self):
        if min(self.n_surface, self.n_bottom, self.n_laplace) <= 0 or self.n_periodic < 0:
            raise ConfigError("collocation counts must be positive")


@dataclass
class CollocationSets:
    """Fixed collocation points.

    ``z_l`` holds the unclamped interior heights; the clamp is recomputed from
    them every epoch.  When segments are used, every set is ordered by segment
    and ``seg_*`` give the segment index of each point.
    """

    x_s: np.ndarray
    t_s: np.ndarray
    x_b: np.ndarray
    t_b: np.ndarray
    x_l: np.ndarray
    t_l: np.ndarray
    z_l: np.ndarray
    x_p: np.ndarray
    z_p: np.ndarray
    seed: int
    seg_s: np.ndarray | None = None
    seg_b: np.ndarray | None = None
    seg_l: np.ndarray | None = None

    @property
    def counts(self) -> dict:
        return {"surface": self.x_s.size, "bottom": self.x_b.size, "laplace": self.x_l.size,
                "periodic": self.x_p.size}

    def active(self, n_segments: int) -> "CollocationSets":
        """Points of the first `n_segments` segments (prefix views)."""
        if self.seg_s is None:
            return self
        ns = int(np.searchsorted(self.seg_s, n_segments))
        nb = int(np.searchsorted(self.seg_b, n_segments))
        nl = int(np.searchsorted(self.seg_l, n_segments))
        return CollocationSets(self.x_s[:ns], self.t_s[:ns], self.x_b[:nb], self.t_b[:nb],
                               self.x_l[:nl], self.t_l[:nl], self.z_l[:nl], self.x_p, self.z_p,
                               self.seed, self.seg_s[:ns], self.seg_b[:nb], self.seg_l[:nl])


def _sample_xt(rng, domain: Domain, n: int, t_range=None):
    t_lo, t_hi = t_range if t_range is not None else domain.t
    if domain.region is None:
        return rng.uniform(*domain.x, n), rng.uniform(t_lo, t_hi, n)
    xs, ts = [], []
    got = 0
    tries = 0
    while got < n:
        m = max(2 * (n - got), 64)
        x = rng.uniform(*domain.x, m)
        t = rng.uniform(t_lo, t_hi, m)
        ok = domain.region.contains(x, t)
        xs.append(x[ok])
        ts.append(t[ok])
        got += int(ok.sum())
        tries += 1
        if tries > 10000:
            raise DomainError("prediction region has no overlap with the sampling box")
    return np.concatenate(xs)[:n], np.concatenate(ts)[:n]


def allocate(total: int, weights) -> np.ndarray:
    """Split `total` into integer parts proportional to `weights` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return base


def sample_collocation(domain: Domain, counts: CollocationCounts, seed: int = 0,
                       segments=None) -> CollocationSets:
    """Uniform pseudo-random collocation points, drawn once.

    `segments` is an optional list of (t_lo, t_hi) intervals; each set's budget
    is split between them in proportion to their duration.
    """
    rng = np.random.default_rng(seed)
    z_lo, z_hi = -domain.depth, domain.z_top

    if segments is None:
        x_s, t_s = _sample_xt(rng, domain, counts.n_surface)
        x_b, t_b = _sample_xt(rng, domain, counts.n_bottom)
        x_l, t_l = _sample_xt(rng, domain, counts.n_laplace)
        seg = (None, None, None)
    else:
        durations = [hi - lo for lo, hi in segments]
        parts = {}
        for key, n in (("s", counts.n_surface), ("b", counts.n_bottom), ("l", counts.n_laplace)):
            alloc = allocate(n, durations)
            xs, ts, idx = [], [], []
            for i, ((lo, hi), k) in enumerate(zip(segments, alloc)):
                x, t = _sample_xt(rng, domain, int(k), (lo, hi))
                xs.append(x)
                ts.append(t)
                idx.append(np.full(int(k), i))
            parts[key] = (np.concatenate(xs), np.concatenate(ts), np.concatenate(idx))
        x_s, t_s, s_idx = parts["s"]
        x_b, t_b, b_idx = parts["b"]
        x_l, t_l, l_idx = parts["l"]
        seg = (s_idx, b_idx, l_idx)
    z_l = rng.uniform(z_lo, z_hi, x_l.size)
    x_p = rng.uniform(*domain.x, counts.n_periodic)
    z_p = rng.uniform(z_lo, z_hi, counts.n_periodic)
    return CollocationSets(x_s, t_s, x_b, t_b, x_l, t_l, z_l, x_p, z_p, seed, *seg)


# --------------------------------------------------------------------------- losses

def _msq(r) -> ad.Var:
    return ad.mean(ad.square(r))


def clamp_interior_z(model, constraints, x, t, z) -> np.ndarray:
    """z <- min(z, eta_tilde(x, t)) for each point, using the current surface."""
    eta = _eta_values(model, constraints, x, t)
    return np.minimum(np.asarray(z, dtype=float), eta)


def _eta_values(model, constraints, x, t):
    with ad.no_grad():
        return constrained_jets(model, constraints, np.asarray(x, float), np.asarray(t, float),
                                VALUE_ONLY).data[0, :, 0]


def loss_bottom(model, x_b, t_b, depth: float) -> ad.Var:
    """Mean square of Phi_z on the bed."""
    z = np.full(np.shape(x_b), -float(depth))
    jet = model.phi_jets(x_b, t_b, z, BOTTOM_PHI)
    return _msq(jet.slot("z"))


def surface_residuals(model, constraints, x_s, t_s, gravity: float = GRAVITY,
                      coupling: str = "partial") -> tuple[ad.Var, ad.Var]:
    """Kinematic and dynamic residuals with the potential evaluated at z = eta_tilde.

    ``coupling='partial'`` uses the partials of Phi in its own arguments;
    ``'total'`` adds the chain-rule terms Phi_z * eta_x and Phi_z * eta_t.
    """
    eta = constrained_jets(model, constraints, x_s, t_s, SURFACE_ETA)
    e0, ex, et = eta.slot("value"), eta.slot("x"), eta.slot("t")
    phi = model.phi_jets(x_s, t_s, e0, SURFACE_PHI)
    px, pt, pz = phi.slot("x"), phi.slot("t"), phi.slot("z")
    if coupling == "total":
        px = px + pz * ex
        pt = pt + pz * et
    elif coupling != "partial":
        raise ConfigError(f"unknown surface coupling {coupling!r}")
    kin = et + ex * px - pz
    dyn = pt + e0 * float(gravity) + (ad.square(px) + ad.square(pz)) * 0.5
    return kin, dyn


def loss_kinematic(model, constraints, x_s, t_s, coupling: str = "partial") -> ad.Var:
    return _msq(surface_residuals(model, constraints, x_s, t_s, GRAVITY, coupling)[0])


def loss_dynamic(model, constraints, x_s, t_s, gravity: float = GRAVITY,
                 coupling: str = "partial") -> ad.Var:
    return _msq(surface_residuals(model, constraints, x_s, t_s, gravity, coupling)[1])


def loss_laplace(model, x_l, t_l, z_l) -> ad.Var:
    """Mean square of Phi_xx + Phi_zz at (already clamped) interior points."""
    jet = model.phi_jets(x_l, t_l, z_l, LAPLACE_PHI)
    return _msq(jet.slot("xx") + jet.slot("zz"))


def loss_periodic(model, constraints, x_p, z_p, t0: float, t1: float) -> tuple[ad.Var, ad.Var]:
    """Endpoint mismatches of eta_tilde and Phi between t0 and t1."""
    n = np.size(x_p)
    ta, tb = np.full(n, float(t0)), np.full(n, float(t1))
    ea = constrained_jets(model, constraints, x_p, ta, VALUE_ONLY)
    eb = constrained_jets(model, constraints, x_p, tb, VALUE_ONLY)
    top = np.minimum(ea.data[0, :, 0], eb.data[0, :, 0])
    z = np.minimum(np.asarray(z_p, dtype=float), top)
    pa = model.phi_jets(x_p, ta, z, VALUE_ONLY)
    pb = model.phi_jets(x_p, tb, z, VALUE_ONLY)
    return _msq(ea.value - eb.value), _msq(pa.value - pb.value)


def data_mse(model, constraints, observations: ObservationSet) -> float:
    """Diagnostic misfit between eta_tilde and the measurements."""
    with ad.no_grad():
        e = _eta_values(model, constraints, observations.x, observations.t)
    return float(np.mean((e - observations.eta) ** 2))


@dataclass
class LossBundle:
    """Loss components (tape nodes) plus the diagnostic data misfit."""

    components: dict
    mse_data: float | None = None
    counts: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {k: float(v.value) for k, v in self.components.items()}


def evaluate_losses(model, constraints, colloc: CollocationSets, domain: Domain,
                    periodic: bool = False, coupling: str = "partial",
                    observations: ObservationSet | None = None) -> LossBundle:
    """All active loss components for one epoch, with the interior clamp applied."""
    z_l = clamp_interior_z(model, constraints, colloc.x_l, colloc.t_l, colloc.z_l)
    kin, dyn = surface_residuals(model, constraints, colloc.x_s, colloc.t_s, domain.gravity, coupling)
    comps = {
        "lap": loss_laplace(model, colloc.x_l, colloc.t_l, z_l),
        "kin": _msq(kin),
        "dyn": _msq(dyn),
        "bot": loss_bottom(model, colloc.x_b, colloc.t_b, domain.depth),
    }
    if periodic:
        if colloc.x_p.size == 0:
            raise ConfigError("periodic losses need periodic collocation points")
        comps["pb_eta"], comps["pb_phi"] = loss_periodic(model, constraints, colloc.x_p, colloc.z_p, *domain.t)
    for k, v in comps.items():
        if not np.isfinite(v.value):
            raise ad.NumericError(f"non-finite loss component {k}")
    mse = data_mse(model, constraints, observations) if observations is not None else None
    counts = {"surface": colloc.x_s.size, "bottom": colloc.x_b.size, "laplace": colloc.x_l.size}
    return LossBundle(comps, mse, counts)


# --------------------------------------------------------------------------- analytic fields

class LinearWaveFields:
    """Linear-theory elevation and potential of a sea state, evaluated through jets.

    Exposes the same ``eta_jets``/``phi_jets`` interface as the networks so the
    residual losses can be checked against an exact solution.
    """

    def __init__(self, spec: SeaStateSpec):
        self.spec = spec
        k, w, a, p = spec.wavenumbers, spec.omegas, spec.amplitudes, spec.phases
        self._w_phase = np.array([k, -w])          # (2, n): theta = k x - w t + phase
        self._phase = p
        self._a = a[:, None]
        d = spec.depth
        self._phi_amp = (spec.gravity * a / w)[:, None]
        self._k = k[None, :]
        self._b2 = -2 * k * d
        self._norm = 1.0 / (1.0 + np.exp(-2 * k * d))

    def _theta(self, x, t, layout):
        xt = ad.jet_concat([ad.seed(x, "x", layout), ad.seed(t, "t", layout)])
        return ad.jet_affine(xt, self._w_phase, self._phase)

    def eta_jets(self, x, t, layout: Layout) -> Jet:
        return ad.jet_affine(ad.jet_cos(self._theta(x, t, layout)), self._a)

    def phi_jets(self, x, t, z, layout: Layout) -> Jet:
        zj = ad.seed(z, "z", layout)
        up = ad.jet_exp(ad.jet_affine(zj, self._k))
        down = ad.jet_exp(ad.jet_affine(zj, -self._k, self._b2))
        cosh_ratio = (up + down) * self._norm
        s = ad.jet_sin(self._theta(x, t, layout))
        return ad.jet_affine(ad.jet_mul(cosh_ratio, s), self._phi_amp)
