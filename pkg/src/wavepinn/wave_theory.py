"""Linear (Airy) wave theory: dispersion, superposed fields, spectra and
prediction-region geometry.

Everything in here is closed-form or a scalar root find, and serves as the
analytic reference the neural solver is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

GRAVITY = 9.81


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a wave-theory routine."""


@dataclass(frozen=True)
class WaveComponent:
    amplitude: float
    omega: float
    k: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0 or self.omega <= 0 or self.k <= 0:
            raise DomainError(f"invalid wave component {self}")

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def wavelength(self) -> float:
        return 2 * math.pi / self.k


@dataclass(frozen=True)
class SeaStateSpec:
    """A superposition of linear components over a flat bed."""

    components: tuple[WaveComponent, ...]
    depth: float
    gravity: float = GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.depth <= 0 or self.gravity <= 0:
            raise DomainError("depth and gravity must be positive")
        if not self.components:
            raise DomainError("a sea state needs at least one component")
        for c in self.components:
            w = math.sqrt(self.gravity * c.k * math.tanh(c.k * self.depth))
            if abs(w - c.omega) > 1e-10 * c.omega:
                raise DomainError(f"component with omega={c.omega} violates the dispersion relation")

    @classmethod
    def from_frequencies(cls, omegas, amplitudes, phases=None, depth=1.0, gravity=GRAVITY):
        phases = np.zeros(len(omegas)) if phases is None else phases
        comps = tuple(
            WaveComponent(float(a), float(w), solve_dispersion(float(w), depth, gravity), float(p))
            for w, a, p in zip(omegas, amplitudes, phases)
        )
        return cls(comps, depth, gravity)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([c.amplitude for c in self.components])

    @property
    def omegas(self) -> np.ndarray:
        return np.array([c.omega for c in self.components])

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.array([c.k for c in self.components])

    @property
    def phases(self) -> np.ndarray:
        return np.array([c.phase for c in self.components])

    def scaled(self, factor: float) -> "SeaStateSpec":
        comps = tuple(WaveComponent(c.amplitude * factor, c.omega, c.k, c.phase) for c in self.components)
        return SeaStateSpec(comps, self.depth, self.gravity)

    def is_periodic(self, duration: float, tol: float = 1e-9) -> bool:
        """True when every component completes a whole number of periods in `duration`."""
        cycles = self.omegas * duration / (2 * math.pi)
        return bool(np.all(np.abs(cycles - np.round(cycles)) < tol * np.maximum(cycles, 1.0)))


# Three-component deep-water reference sea.  Periods are the base quantity; the
# tabulated frequencies 0.418/0.838/1.047 rad/s are 2*pi/T rounded.
REFERENCE_PERIODS = (15.0, 7.5, 6.0)
REFERENCE_AMPLITUDES = (1.117, 0.280, 0.358)
REFERENCE_PHASES = (0.5 * math.pi, -0.2 * math.pi, 0.75 * math.pi)
REFERENCE_DEPTH = 200.0


def reference_sea(rows: Sequence[int] = (0, 1, 2), depth: float = REFERENCE_DEPTH) -> SeaStateSpec:
    """Sea state built from the selected (0-based) rows of the three-component table."""
    omegas = [2 * math.pi / REFERENCE_PERIODS[i] for i in rows]
    amps = [REFERENCE_AMPLITUDES[i] for i in rows]
    phases = [REFERENCE_PHASES[i] for i in rows]
    return SeaStateSpec.from_frequencies(omegas, amps, phases, depth=depth)


def solve_dispersion(omega: float, depth: float, gravity: float = GRAVITY,
                     max_newton: int = 50) -> float:
    """Wavenumber k solving omega**2 = g k tanh(k d).

    Newton from the deep-water guess omega**2/g; bisection if Newton does not
    settle within `max_newton` iterations.
    """
    if not (omega > 0 and depth > 0 and gravity > 0):
        raise DomainError(f"non-positive input: omega={omega}, depth={depth}, gravity={gravity}")
    if not all(math.isfinite(v) for v in (omega, depth, gravity)):
        raise DomainError("non-finite input")
    target = omega * omega / gravity

    def f(k):
        return k * math.tanh(k * depth) - target

    k = max(target, omega / math.sqrt(gravity * depth))
    for _ in range(max_newton):
        th = math.tanh(k * depth)
        dk = (k * th - target) / (th + k * depth * (1.0 - th * th))
        k_new = k - dk
        if k_new <= 0:
            break
        if abs(dk) <= 1e-15 * k_new:
            return _polish(k_new, omega, depth, gravity)
        k = k_new
    # bracket: k tanh(kd) is increasing, shallow guess is an upper bound
    lo, hi = 0.0, max(target, omega / math.sqrt(gravity * depth)) * 2.0
    while f(hi) < 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-16 * hi:
            break
    return 0.5 * (lo + hi)


def _polish(k, omega, depth, gravity):
    # one extra Newton step in the frequency residual; cheap insurance for the 1e-12 contract
    th = math.tanh(k * depth)
    w = math.sqrt(gravity * k * th)
    dw = gravity * (th + k * depth * (1 - th * th)) / (2 * w)
    return k - (w - omega) / dw


def dispersion_omega(k, depth, gravity=GRAVITY):
    return np.sqrt(gravity * k * np.tanh(k * depth))


def group_velocity(omega: float, depth: float, gravity: float = GRAVITY) -> float:
    k = solve_dispersion(omega, depth, gravity)
    kd = k * depth
    # sinh overflows beyond kd ~ 355; the correction term is 0 there anyway
    corr = kd / math.sinh(2 * kd) if kd < 300 else 0.0
    return (0.5 + corr) * omega / k


def phase_velocity(omega: float, depth: float, gravity: float = GRAVITY) -> float:
    return omega / solve_dispersion(omega, depth, gravity)


def lwt_elevation(spec: SeaStateSpec, x, t):
    """Surface elevation of the superposition, broadcasting over x and t."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    eta = np.zeros(np.broadcast(x, t).shape)
    for c in spec.components:
        eta = eta + c.amplitude * np.cos(c.k * x - c.omega * t + c.phase)
    return eta


def _cosh_ratio(k, z, d):
    # cosh(k(z+d))/cosh(kd) without overflow for deep water
    return np.exp(k * z) * (1 + np.exp(-2 * k * (z + d))) / (1 + np.exp(-2 * k * d))


def _sinh_ratio(k, z, d):
    return np.exp(k * z) * (1 - np.exp(-2 * k * (z + d))) / (1 + np.exp(-2 * k * d))


def lwt_potential(spec: SeaStateSpec, x, t, z):
    """Velocity potential of the superposition; z is measured up from still water."""
    x, t, z = (np.asarray(v, dtype=float) for v in (x, t, z))
    if np.any(z < -spec.depth):
        raise DomainError("z below the sea bed")
    g, d = spec.gravity, spec.depth
    phi = np.zeros(np.broadcast(x, t, z).shape)
    for c in spec.components:
        phi = phi + (g * c.amplitude / c.omega) * _cosh_ratio(c.k, z, d) * np.sin(c.k * x - c.omega * t + c.phase)
    return phi


def lwt_potential_partials(spec: SeaStateSpec, x, t, z) -> dict[str, np.ndarray]:
    """Hand-derived partials of the potential: phi, phi_x, phi_t, phi_z, phi_xx, phi_zz."""
    x, t, z = (np.asarray(v, dtype=float) for v in (x, t, z))
    g, d = spec.gravity, spec.depth
    shape = np.broadcast(x, t, z).shape
    out = {key: np.zeros(shape) for key in ("phi", "phi_x", "phi_t", "phi_z", "phi_xx", "phi_zz")}
    for c in spec.components:
        amp = g * c.amplitude / c.omega
        ch = _cosh_ratio(c.k, z, d)
        sh = _sinh_ratio(c.k, z, d)
        theta = c.k * x - c.omega * t + c.phase
        s, co = np.sin(theta), np.cos(theta)
        out["phi"] += amp * ch * s
        out["phi_x"] += amp * ch * c.k * co
        out["phi_t"] += -amp * ch * c.omega * co
        out["phi_z"] += amp * c.k * sh * s
        out["phi_xx"] += -amp * ch * c.k ** 2 * s
        out["phi_zz"] += amp * ch * c.k ** 2 * s
    return out


def lwt_elevation_partials(spec: SeaStateSpec, x, t) -> dict[str, np.ndarray]:
    x, t = np.asarray(x, dtype=float), np.asarray(t, dtype=float)
    shape = np.broadcast(x, t).shape
    out = {key: np.zeros(shape) for key in ("eta", "eta_x", "eta_t")}
    for c in spec.components:
        theta = c.k * x - c.omega * t + c.phase
        out["eta"] += c.amplitude * np.cos(theta)
        out["eta_x"] += -c.amplitude * c.k * np.sin(theta)
        out["eta_t"] += c.amplitude * c.omega * np.sin(theta)
    return out


def surface_residuals(spec: SeaStateSpec, x, t) -> tuple[np.ndarray, np.ndarray]:
    """Kinematic and dynamic free-surface residuals of the linear solution, at z = eta."""
    e = lwt_elevation_partials(spec, x, t)
    p = lwt_potential_partials(spec, x, t, e["eta"])
    kin = e["eta_t"] + e["eta_x"] * p["phi_x"] - p["phi_z"]
    dyn = p["phi_t"] + spec.gravity * e["eta"] + 0.5 * (p["phi_x"] ** 2 + p["phi_z"] ** 2)
    return kin, dyn


# --------------------------------------------------------------------------- spectra

@dataclass(frozen=True)
class JonswapSpec:
    """JONSWAP sea state.  Give exactly one of `hs` and `steepness` (0.5 * Hs * kp)."""

    peak_period: float
    gamma: float = 3.3
    hs: float | None = None
    steepness: float | None = None
    depth: float = 0.7
    gravity: float = GRAVITY

    def __post_init__(self):
        if self.peak_period <= 0:
            raise DomainError("peak period must be positive")
        if self.gamma < 1:
            raise DomainError("peak enhancement factor must be >= 1")
        if (self.hs is None) == (self.steepness is None):
            raise DomainError("give exactly one of hs and steepness")
        if self.depth <= 0:
            raise DomainError("depth must be positive")
        kp = solve_dispersion(self.omega_p, self.depth, self.gravity)
        if self.hs is None:
            object.__setattr__(self, "hs", 2.0 * self.steepness / kp)
        else:
            object.__setattr__(self, "steepness", 0.5 * self.hs * kp)

    @property
    def omega_p(self) -> float:
        return 2 * math.pi / self.peak_period

    @property
    def k_p(self) -> float:
        return solve_dispersion(self.omega_p, self.depth, self.gravity)

    @property
    def wavelength_p(self) -> float:
        return 2 * math.pi / self.k_p


def _jonswap_shape(spec: JonswapSpec, omega):
    omega = np.asarray(omega, dtype=float)
    wp = spec.omega_p
    with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
        sigma = np.where(omega <= wp, 0.07, 0.09)
        r = np.exp(-((omega - wp) ** 2) / (2 * sigma ** 2 * wp ** 2))
        base = spec.gravity ** 2 * omega ** -5.0 * np.exp(-1.25 * (wp / omega) ** 4)
        s = base * spec.gamma ** r
    return np.where(omega > 0, np.nan_to_num(s, nan=0.0, posinf=0.0), 0.0)


def _jonswap_alpha(spec: JonswapSpec) -> float:
    # scale so that 4 sqrt(m0) = Hs
    wp = spec.omega_p
    pieces = [(1e-3 * wp, 0.5 * wp), (0.5 * wp, wp), (wp, 2 * wp), (2 * wp, 50 * wp)]
    m0 = sum(integrate.quad(lambda w: float(_jonswap_shape(spec, w)), a, b, limit=200)[0] for a, b in pieces)
    return (spec.hs / 4.0) ** 2 / m0


def jonswap_density(spec: JonswapSpec, omega):
    """One-sided spectral density S(omega) [m^2 s/rad], scaled to the significant height."""
    return _jonswap_alpha(spec) * _jonswap_shape(spec, omega)


def spectral_cutoffs(spec: JonswapSpec, fraction: float) -> tuple[float, float]:
    """Frequencies below and above the peak where S drops to `fraction` of its maximum."""
    if not 0 < fraction < 1:
        raise DomainError("fraction must lie in (0, 1)")
    wp = spec.omega_p
    level = fraction * float(_jonswap_shape(spec, wp))

    def g(w):
        return float(_jonswap_shape(spec, w)) - level

    def bisect(a, b):
        ga = g(a)
        for _ in range(200):
            m = 0.5 * (a + b)
            gm = g(m)
            if (gm > 0) == (ga > 0):
                a, ga = m, gm
            else:
                b = m
            if abs(b - a) <= 1e-14 * wp:
                break
        return 0.5 * (a + b)

    lo = wp / 1.5
    while g(lo) > 0:
        lo /= 1.5
    hi = wp * 1.5
    while g(hi) > 0:
        hi *= 1.5
    return bisect(wp, lo), bisect(wp, hi)


def sample_jonswap(spec: JonswapSpec, n_components: int, omega_min: float, omega_max: float,
                   seed: int = 0) -> SeaStateSpec:
    """Equal-bin discretisation with random phases; a_n = sqrt(2 S(w_n) dw)."""
    if n_components < 1 or not 0 < omega_min < omega_max:
        raise DomainError("need n_components >= 1 and 0 < omega_min < omega_max")
    dw = (omega_max - omega_min) / n_components
    omegas = omega_min + dw * (np.arange(n_components) + 0.5)
    amps = np.sqrt(2 * jonswap_density(spec, omegas) * dw)
    phases = np.random.default_rng(seed).uniform(0, 2 * math.pi, n_components)
    return SeaStateSpec.from_frequencies(omegas, amps, phases, depth=spec.depth, gravity=spec.gravity)


def nyquist_spacing(min_wavelength: float) -> float:
    """Largest sensor spacing that still puts two samples on the shortest wave."""
    if min_wavelength <= 0:
        raise DomainError("wavelength must be positive")
    return min_wavelength / 2.0


# --------------------------------------------------------------------------- prediction region

@dataclass(frozen=True)
class PredictionRegion:
    """Sheared space-time region bounded by the fastest and slowest group velocities."""

    cg_high: float
    cg_low: float
    x_offset_left: float
    x_extent_right: float
    t_max: float
    t_min: float = 0.0

    def __post_init__(self):
        if not self.cg_high >= self.cg_low > 0:
            raise DomainError("need cg_high >= cg_low > 0")
        if self.t_max <= self.t_min:
            raise DomainError("empty time interval")
        for t in (self.t_min, self.t_max):
            if self.cg_high * t + self.x_offset_left >= self.cg_low * t + self.x_extent_right:
                raise DomainError(f"prediction region is empty at t={t}")

    @classmethod
    def from_spectrum(cls, spec: JonswapSpec, fraction: float, x_offset_left: float,
                      x_extent_right: float, t_max: float, t_min: float = 0.0) -> "PredictionRegion":
        w_lo, w_hi = spectral_cutoffs(spec, fraction)
        return cls(group_velocity(w_lo, spec.depth, spec.gravity),
                   group_velocity(w_hi, spec.depth, spec.gravity),
                   x_offset_left, x_extent_right, t_max, t_min)

    def bounds(self, t):
        return prediction_region_bounds(self, t)

    def contains(self, x, t):
        x, t = np.asarray(x, dtype=float), np.asarray(t, dtype=float)
        lo = self.cg_high * t + self.x_offset_left
        hi = self.cg_low * t + self.x_extent_right
        return (t >= self.t_min) & (t <= self.t_max) & (x >= lo) & (x <= hi)

    @property
    def box(self) -> tuple[float, float, float, float]:
        """Bounding box (x_min, x_max, t_min, t_max) of the region."""
        xs = [self.cg_high * t + self.x_offset_left for t in (self.t_min, self.t_max)]
        xe = [self.cg_low * t + self.x_extent_right for t in (self.t_min, self.t_max)]
        return min(xs), max(xe), self.t_min, self.t_max


def prediction_region_bounds(region: PredictionRegion, t: float) -> tuple[float, float]:
    if not region.t_min - 1e-12 <= t <= region.t_max + 1e-12:
        raise DomainError(f"t={t} outside [{region.t_min}, {region.t_max}]")
    x_min = region.cg_high * t + region.x_offset_left
    x_max = region.cg_low * t + region.x_extent_right
    if x_min >= x_max:
        raise DomainError(f"prediction region is empty at t={t}")
    return x_min, x_max
