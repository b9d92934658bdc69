"""Elevation and potential networks.

Each network normalises its inputs to [-1, 1] per axis, lifts them with a
trainable Fourier embedding ``[sin(2 pi F v); cos(2 pi F v); v]`` and feeds a
tanh MLP with a single linear output.  All evaluation goes through jets so the
same code path serves plain values and input derivatives.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, Layout, VALUE_ONLY, NumericError


@dataclass(frozen=True)
class Ranges:
    """Static normalisation box.  ``z`` is None for the (x, t) elevation network."""

    x: tuple[float, float]
    t: tuple[float, float]
    z: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("x", "t", "z"):
            r = getattr(self, name)
            if r is None:
                continue
            r = (float(r[0]), float(r[1]))
            if not r[1] > r[0]:
                raise ValueError(f"empty {name} range {r}")
            object.__setattr__(self, name, r)

    def axes(self) -> list[tuple[float, float]]:
        return [self.x, self.t] + ([self.z] if self.z is not None else [])

    def drop_z(self) -> "Ranges":
        return Ranges(self.x, self.t)


def normalize(point, ranges: Ranges) -> np.ndarray:
    """Affine map of each coordinate onto [-1, 1]; trailing axis holds the coordinates."""
    p = np.asarray(point, dtype=float)
    axes = ranges.axes()[: p.shape[-1]]
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[1] for a in axes])
    return 2.0 * (p - lo) / (hi - lo) - 1.0


def denormalize(vhat, ranges: Ranges) -> np.ndarray:
    v = np.asarray(vhat, dtype=float)
    axes = ranges.axes()[: v.shape[-1]]
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[1] for a in axes])
    return lo + (v + 1.0) * (hi - lo) / 2.0


def fourier_init(n_freq: int, n_in: int, layout: str = "replicate", rng=None) -> np.ndarray:
    """Initial embedding matrix, shape (n_freq, n_in)."""
    if layout == "replicate":
        vals = np.linspace(-0.4, 0.4, n_freq)
        return np.repeat(vals[:, None], n_in, axis=1)
    if layout == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        return rng.uniform(-0.4, 0.4, size=(n_freq, n_in))
    raise ValueError(f"unknown embedding layout {layout!r}")


def embed(vhat, F) -> np.ndarray:
    """Fourier features of normalised inputs: [sin(2 pi F v); cos(2 pi F v); v]."""
    vhat = np.atleast_2d(np.asarray(vhat, dtype=float))
    F = np.asarray(F, dtype=float)
    if F.shape[1] != vhat.shape[1]:
        raise ValueError(f"embedding expects {F.shape[1]} inputs, got {vhat.shape[1]}")
    p = 2 * math.pi * vhat @ F.T
    return np.concatenate([np.sin(p), np.cos(p), vhat], axis=1)


def xavier(fan_in: int, fan_out: int, rng) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


class FieldNet:
    """Fourier-embedded tanh MLP over normalised coordinates.

    Parameter order (also the checkpoint order): F (if n_freq > 0), then
    (W, b) for every hidden layer, then the output (W, b).
    """

    def __init__(self, ranges: Ranges, hidden_layers: int, width: int, n_freq: int = 10,
                 rng=None, embedding_layout: str = "replicate", output_scale: float = 1.0,
                 name: str = "net"):
        if hidden_layers < 1 or width < 1 or n_freq < 0:
            raise ValueError("layer sizes must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        self.ranges = ranges
        self.n_in = len(ranges.axes())
        self.hidden_layers = hidden_layers
        self.width = width
        self.n_freq = n_freq
        self.embedding_layout = embedding_layout
        self.output_scale = float(output_scale)
        self.name = name
        self.F = ad.parameter(fourier_init(n_freq, self.n_in, embedding_layout, rng), f"{name}.F") if n_freq else None
        sizes = [2 * n_freq + self.n_in] + [width] * hidden_layers + [1]
        self.weights = []
        self.biases = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.weights.append(ad.parameter(xavier(a, b, rng), f"{name}.W{i}"))
            self.biases.append(ad.parameter(np.zeros(b), f"{name}.b{i}"))
        lo = np.array([r[0] for r in ranges.axes()])
        hi = np.array([r[1] for r in ranges.axes()])
        self._norm_w = np.diag(2.0 / (hi - lo))
        self._norm_b = -(hi + lo) / (hi - lo)

    def parameters(self) -> list[ad.Var]:
        ps = [self.F] if self.F is not None else []
        for w, b in zip(self.weights, self.biases):
            ps += [w, b]
        return ps

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def jets(self, coords: Sequence[Jet], layout: Layout | None = None) -> Jet:
        """Network output jet, shape (S, N, 1), from per-coordinate jets."""
        if len(coords) != self.n_in:
            raise ValueError(f"{self.name} takes {self.n_in} coordinates, got {len(coords)}")
        v = ad.jet_concat(list(coords))
        vhat = ad.jet_affine(v, self._norm_w, self._norm_b)
        if self.F is not None:
            p = ad.jet_affine(vhat, self.F.T, scale=2 * math.pi)
            h = ad.jet_concat([ad.jet_sin(p), ad.jet_cos(p), vhat])
        else:
            h = vhat
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.jet_affine(h, w, b)
            if i < last:
                h = ad.jet_tanh(h)
        if self.output_scale != 1.0:
            h = h * self.output_scale
        return h

    def __call__(self, *cols) -> np.ndarray:
        """Plain batch evaluation, no tape."""
        cols = [np.asarray(c, dtype=float).reshape(-1) for c in cols]
        for c in cols:
            if not np.all(np.isfinite(c)):
                raise NumericError(f"non-finite input to {self.name}")
        with ad.no_grad():
            coords = [ad.seed(c, None, VALUE_ONLY) for c in cols]
            return self.jets(coords, VALUE_ONLY).data[0, :, 0].copy()

    def config(self) -> dict:
        return {"hidden_layers": self.hidden_layers, "width": self.width, "n_freq": self.n_freq,
                "embedding_layout": self.embedding_layout, "output_scale": self.output_scale,
                "ranges": [list(r) for r in self.ranges.axes()], "name": self.name}


@dataclass
class ModelConfig:
    hidden_layers: int = 3
    width: int = 64
    n_freq: int = 10
    embedding_layout: str = "replicate"
    phi_scale: float = 1.0
    eta_scale: float = 1.0

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        return cls(hidden_layers=4, width=200)


class PinnModel:
    """The elevation network over (x, t) and the potential network over (x, t, z)."""

    def __init__(self, eta_net: FieldNet, phi_net: FieldNet, seed: int | None = None):
        if eta_net.n_in != 2 or phi_net.n_in != 3:
            raise ValueError("eta_net takes (x, t), phi_net takes (x, t, z)")
        self.eta_net = eta_net
        self.phi_net = phi_net
        self.seed = seed
        self.constraints = None

    @property
    def ranges(self) -> Ranges:
        return self.phi_net.ranges

    def parameters(self) -> list[ad.Var]:
        return self.eta_net.parameters() + self.phi_net.parameters()

    @property
    def n_params(self) -> int:
        return self.eta_net.n_params + self.phi_net.n_params

    def get_flat(self) -> np.ndarray:
        return ad.flatten_params(self.parameters())

    def set_flat(self, flat) -> None:
        ad.assign_params(self.parameters(), flat)

    def eta_jets(self, x, t, layout: Layout) -> Jet:
        return self.eta_net.jets((ad.seed(x, "x", layout), ad.seed(t, "t", layout)), layout)

    def phi_jets(self, x, t, z, layout: Layout) -> Jet:
        return self.phi_net.jets((ad.seed(x, "x", layout), ad.seed(t, "t", layout),
                                  ad.seed(z, "z", layout)), layout)


def init_model(ranges: Ranges, config: ModelConfig | None = None, seed: int = 0) -> PinnModel:
    """Fresh model with Xavier weights and zero biases; deterministic in `seed`."""
    config = config or ModelConfig()
    if ranges.z is None:
        raise ValueError("the potential network needs a z range")
    rng = np.random.default_rng(seed)
    eta = FieldNet(ranges.drop_z(), config.hidden_layers, config.width, config.n_freq, rng,
                   config.embedding_layout, config.eta_scale, name="eta")
    phi = FieldNet(ranges, config.hidden_layers, config.width, config.n_freq, rng,
                   config.embedding_layout, config.phi_scale, name="phi")
    return PinnModel(eta, phi, seed)


def eval_eta(model: PinnModel, x, t) -> np.ndarray:
    """Raw elevation-network output (before the measurement constraint)."""
    return model.eta_net(x, t)


def eval_phi(model: PinnModel, x, t, z) -> np.ndarray:
    x, t, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, t, z)))
    return model.phi_net(x, t, z).reshape(x.shape)


# --------------------------------------------------------------------------- checkpoints

def _net_from_config(cfg: dict) -> FieldNet:
    axes = [tuple(r) for r in cfg["ranges"]]
    ranges = Ranges(*axes)
    return FieldNet(ranges, cfg["hidden_layers"], cfg["width"], cfg["n_freq"],
                    np.random.default_rng(0), cfg.get("embedding_layout", "replicate"),
                    cfg.get("output_scale", 1.0), name=cfg.get("name", "net"))


def save_nets(path, nets: dict[str, FieldNet], meta: dict | None = None) -> None:
    """Write ``<path>.json`` (layout metadata) and ``<path>.bin`` (little-endian float64)."""
    path = Path(path)
    doc = {"format": "wavepinn-checkpoint", "version": 1, "dtype": "<f8",
           "nets": {}, "meta": meta or {}}
    blobs = []
    offset = 0
    for key, net in nets.items():
        entry = net.config()
        entry["params"] = []
        for p in net.parameters():
            entry["params"].append({"name": p.name, "shape": list(p.value.shape), "offset": offset})
            offset += p.value.size
            blobs.append(p.value.ravel())
        doc["nets"][key] = entry
    doc["n_values"] = offset
    path.with_suffix(".json").write_text(json.dumps(doc, indent=2))
    np.concatenate(blobs).astype("<f8").tofile(path.with_suffix(".bin"))


def load_nets(path) -> tuple[dict[str, FieldNet], dict]:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if flat.size != doc["n_values"]:
        raise ValueError(f"checkpoint payload has {flat.size} values, expected {doc['n_values']}")
    nets = {}
    for key, entry in doc["nets"].items():
        net = _net_from_config(entry)
        for p, spec in zip(net.parameters(), entry["params"]):
            n = int(np.prod(spec["shape"]))
            p.value = flat[spec["offset"]:spec["offset"] + n].reshape(spec["shape"]).copy()
        nets[key] = net
    return nets, doc.get("meta", {})


def save_model(path, model: PinnModel, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("seed", model.seed)
    save_nets(path, {"eta": model.eta_net, "phi": model.phi_net}, meta)


def load_model(path) -> tuple[PinnModel, dict]:
    nets, meta = load_nets(path)
    return PinnModel(nets["eta"], nets["phi"], meta.get("seed")), meta
