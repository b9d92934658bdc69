"""ReLoBRaLo loss balancing and the weighted total loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad

LOSS_FLOOR = 1e-12


def scaled_softmax(ratios: np.ndarray, m: int) -> np.ndarray:
    z = ratios - np.max(ratios)
    e = np.exp(z)
    return m * e / e.sum()


@dataclass
class BalancerState:
    """ReLoBRaLo state.

    Weights start at 1.  The first call to :func:`relobralo_update` records the
    reference losses L^(0) and leaves the weights unchanged.
    """

    m: int
    alpha: float = 0.95
    tau: float = 20.0
    expected_rho: float = 0.98
    seed: int = 0
    fixed: bool = False
    weights: np.ndarray = None
    initial: np.ndarray | None = None
    previous: np.ndarray | None = None
    nu_last: np.ndarray | None = None
    nu_initial: np.ndarray | None = None
    epoch: int = 0
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one loss component")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.expected_rho <= 1.0 and self.tau > 0):
            raise ValueError("alpha and E[rho] must lie in [0, 1], tau must be positive")
        if self.weights is None:
            self.weights = np.ones(self.m)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)


def relobralo_update(state: BalancerState, losses: Sequence[float], rho: float | None = None) -> np.ndarray:
    """Advance the balancer by one epoch with the current component losses.

    `rho` overrides the Bernoulli lookback draw (one draw per epoch otherwise).
    Returns the new weights.
    """
    L = np.maximum(np.asarray(losses, dtype=float), LOSS_FLOOR)
    if L.shape != (state.m,):
        raise ValueError(f"expected {state.m} losses, got {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ad.NumericError("non-finite loss passed to the balancer")
    if state.initial is None:
        state.initial = L.copy()
        state.previous = L.copy()
        state.nu_last = np.ones(state.m)
        state.nu_initial = np.ones(state.m)
        state.epoch = 1
        return state.weights
    if rho is None:
        rho = float(state.rng.random() < state.expected_rho)
    nu_prev = scaled_softmax(L / (state.tau * state.previous), state.m)
    nu_init = scaled_softmax(L / (state.tau * state.initial), state.m)
    if not state.fixed:
        a = state.alpha
        state.weights = a * (rho * state.weights + (1 - rho) * nu_init) + (1 - a) * nu_prev
    state.nu_last, state.nu_initial = nu_prev, nu_init
    state.previous = L.copy()
    state.epoch += 1
    return state.weights


def total_loss(weights: Sequence[float] | Mapping[str, float], components) -> ad.Var:
    """Weighted sum of the loss components (tape nodes or floats)."""
    if isinstance(components, Mapping):
        names = list(components)
        comps = [components[k] for k in names]
        if isinstance(weights, Mapping):
            weights = [weights[k] for k in names]
    else:
        comps = list(components)
    weights = list(weights)
    if len(weights) != len(comps):
        raise ValueError("one weight per component")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    out = comps[0] * float(weights[0])
    for w, c in zip(weights[1:], comps[1:]):
        out = out + c * float(w)
    return out
