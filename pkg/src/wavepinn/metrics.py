"""Surface Similarity Parameter and grid fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wave_theory import DomainError


@dataclass
class GridField:
    """Values on a uniform (t, x) grid, stored t-major: values[it, ix]."""

    values: np.ndarray
    x0: float
    dx: float
    t0: float
    dt: float
    quantity: str = "elevation"
    units: str = "m"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise DomainError("grid fields need nt, nx >= 2")
        if not (self.dx > 0 and self.dt > 0):
            raise DomainError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("grid field contains non-finite values")

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def mesh(self):
        """(X, T) arrays shaped like values."""
        return np.meshgrid(self.x, self.t)

    def same_grid(self, other: "GridField", rtol: float = 1e-9) -> bool:
        return (self.values.shape == other.values.shape
                and all(np.isclose(a, b, rtol=rtol, atol=1e-12) for a, b in
                        ((self.x0, other.x0), (self.dx, other.dx), (self.t0, other.t0), (self.dt, other.dt))))

    @classmethod
    def from_function(cls, fn, x, t, quantity="elevation", units="m", **meta):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        X, T = np.meshgrid(x, t)
        return cls(fn(X, T), float(x[0]), float(x[1] - x[0]), float(t[0]), float(t[1] - t[0]),
                   quantity, units, dict(meta))


def _ssp(a: np.ndarray, b: np.ndarray) -> float:
    # SSP is scale invariant; normalising first keeps tiny fields from underflowing
    m = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if m == 0:
        return 0.0
    fa = np.fft.fftn(a / m)
    fb = np.fft.fftn(b / m)
    den = np.linalg.norm(fa) + np.linalg.norm(fb)
    if den == 0:
        return 0.0
    return float(np.linalg.norm(fa - fb) / den)


def ssp_2d(truth, estimate) -> float:
    """SSP of two fields on the same (t, x) grid; 0 is a perfect match, 1 is no skill."""
    if isinstance(truth, GridField) and isinstance(estimate, GridField):
        if not truth.same_grid(estimate):
            raise DomainError("SSP needs identical grids")
        a, b = truth.values, estimate.values
    else:
        a = np.asarray(getattr(truth, "values", truth), dtype=float)
        b = np.asarray(getattr(estimate, "values", estimate), dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise DomainError(f"SSP needs equal 2-D grids, got {a.shape} and {b.shape}")
    return _ssp(a, b)


def ssp_1d(truth, estimate) -> float:
    a = np.asarray(truth, dtype=float)
    b = np.asarray(estimate, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"SSP needs equal 1-D series, got {a.shape} and {b.shape}")
    return _ssp(a, b)


def masked_ssp(truth: np.ndarray, estimate: np.ndarray, mask: np.ndarray) -> float:
    """SSP restricted to a subset of grid cells (cells outside are zeroed in both fields)."""
    mask = np.asarray(mask, dtype=bool)
    return _ssp(np.where(mask, truth, 0.0), np.where(mask, estimate, 0.0))


def error_summary(truth, estimate) -> dict:
    a = np.asarray(getattr(truth, "values", truth), dtype=float)
    b = np.asarray(getattr(estimate, "values", estimate), dtype=float)
    d = b - a
    return {"ssp": _ssp(a, b), "mse": float(np.mean(d ** 2)), "max_abs": float(np.max(np.abs(d)))}
