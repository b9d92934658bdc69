"""Full-batch optimisers over a flat parameter vector: Adam (AMSGrad) and L-BFGS."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import NumericError


# --------------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    amsgrad: bool = True
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    v_max: np.ndarray | None = None
    step: int = 0

    def reset(self):
        self.m = self.v = self.v_max = None
        self.step = 0


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam step; returns the updated parameter vector."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in adam_step")
    if state.m is None:
        state.m = np.zeros_like(grad)
        state.v = np.zeros_like(grad)
        state.v_max = np.zeros_like(grad)
    if state.m.shape != grad.shape:
        raise ValueError("gradient size changed between Adam steps")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * grad * grad
    if state.amsgrad:
        np.maximum(state.v_max, state.v, out=state.v_max)
        second = state.v_max
    else:
        second = state.v
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    denom = np.sqrt(second) / math.sqrt(bc2) + state.eps
    return params - (state.lr / bc1) * state.m / denom


# --------------------------------------------------------------------------- L-BFGS

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class LbfgsState:
    history: int = 30
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-9
    rel_tol: float = 1e-12
    stall_window: int = 10
    max_ls_evals: int = 25
    pair_tol: float = 1e-10
    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)
    rho: deque = field(default_factory=deque)
    f: float | None = None
    g: np.ndarray | None = None
    n_iter: int = 0
    n_evals: int = 0
    stall: int = 0
    rejected_pairs: int = 0
    fallbacks: int = 0

    def clear_history(self):
        self.s.clear()
        self.y.clear()
        self.rho.clear()

    def invalidate(self):
        """Forget the cached objective value, e.g. after the objective changed."""
        self.f = None
        self.g = None
        self.stall = 0

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        sy = float(s @ y)
        if sy <= self.pair_tol * np.linalg.norm(s) * np.linalg.norm(y):
            self.rejected_pairs += 1
            return False
        if len(self.s) == self.history:
            self.s.popleft()
            self.y.popleft()
            self.rho.popleft()
        self.s.append(s)
        self.y.append(y)
        self.rho.append(1.0 / sy)
        return True

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion: approximately -H g."""
        q = -g.copy()
        alphas = []
        for s, y, rho in zip(reversed(self.s), reversed(self.y), reversed(self.rho)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if self.s:
            s, y = self.s[-1], self.y[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(zip(self.s, self.y, self.rho), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return q


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimiser of the cubic through two points with slopes, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
    d2sq = d1 * d1 - g1 * g2
    if d2sq >= 0 and np.isfinite(d2sq):
        d2 = math.sqrt(d2sq)
        if x1 <= x2:
            den = g2 - g1 + 2 * d2
            t = x2 - (x2 - x1) * (g2 + d2 - d1) / den if den != 0 else 0.5 * (lo + hi)
        else:
            den = g1 - g2 + 2 * d2
            t = x1 - (x1 - x2) * (g1 + d2 - d1) / den if den != 0 else 0.5 * (lo + hi)
        if np.isfinite(t):
            return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(fun: Objective, x, f0, g0, d, t0=1.0, c1=1e-4, c2=0.9, max_evals=25):
    """Line search along `d` satisfying the strong Wolfe conditions.

    Returns (t, f, g, n_evals, ok).  When the conditions cannot be met within
    the budget the best sufficient-decrease point is returned with ok=False;
    t = 0 means no decrease was found.
    """
    gtd0 = float(g0 @ d)
    if not gtd0 < 0:
        return 0.0, f0, g0, 0, False
    dnorm = float(np.max(np.abs(d)))
    evals = 0
    best = (0.0, f0, g0)

    def evaluate(t):
        nonlocal evals, best
        f, g = fun(x + t * d)
        evals += 1
        if not np.isfinite(f):
            f = np.inf
        elif f < best[1] and f <= f0 + c1 * t * gtd0:
            best = (t, f, g)
        return f, g

    def zoom(lo, f_lo, g_lo, hi, f_hi, g_hi):
        while evals < max_evals:
            gl, gh = float(g_lo @ d), float(g_hi @ d)
            a, b = min(lo, hi), max(lo, hi)
            if (b - a) * dnorm < 1e-12:
                break
            if np.isfinite(f_hi):
                t = _cubic_min(lo, f_lo, gl, hi, f_hi, gh, a + 0.1 * (b - a), b - 0.1 * (b - a))
            else:
                t = 0.5 * (lo + hi)
            f, g = evaluate(t)
            gtd = float(g @ d)
            if f > f0 + c1 * t * gtd0 or f >= f_lo:
                hi, f_hi, g_hi = t, f, g
            else:
                if abs(gtd) <= -c2 * gtd0:
                    return t, f, g, True
                if gtd * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo = t, f, g
        return None

    t_prev, f_prev, g_prev = 0.0, f0, g0
    t = t0
    for i in range(max_evals):
        f, g = evaluate(t)
        gtd = float(g @ d)
        if f > f0 + c1 * t * gtd0 or (i > 0 and f >= f_prev):
            res = zoom(t_prev, f_prev, g_prev, t, f, g)
            break
        if abs(gtd) <= -c2 * gtd0:
            return t, f, g, evals, True
        if gtd >= 0:
            res = zoom(t, f, g, t_prev, f_prev, g_prev)
            break
        lo, hi = t + 0.01 * (t - t_prev), 10 * t
        t_next = _cubic_min(t_prev, f_prev, float(g_prev @ d), t, f, gtd, lo, hi)
        t_prev, f_prev, g_prev = t, f, g
        t = t_next
        if evals >= max_evals:
            res = None
            break
    else:
        res = None
    if res is not None:
        t, f, g, ok = res
        return t, f, g, evals, ok
    t, f, g = best
    return t, f, g, evals, False


def lbfgs_minimize(state: LbfgsState, fun: Objective, x0, max_iters: int,
                   callback: Callable | None = None):
    """Run up to `max_iters` L-BFGS iterations from `x0`.

    `state` persists between calls, so training can resume with its history.
    `callback(state, x)` runs after each accepted iteration; returning True stops.
    Returns (x, reason) with reason one of 'grad_tol', 'stalled', 'max_iters',
    'line_search_failed', 'callback'.
    """
    x = np.array(x0, dtype=float)
    if state.f is None or state.g is None:
        state.f, state.g = fun(x)
        state.n_evals += 1
    if not np.isfinite(state.f) or not np.all(np.isfinite(state.g)):
        raise NumericError("non-finite loss or gradient at the L-BFGS start point")
    for _ in range(max_iters):
        f, g = state.f, state.g
        if np.max(np.abs(g)) < state.grad_tol:
            return x, "grad_tol"
        d = state.direction(g)
        t0 = min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300)) if not state.s else 1.0
        t, f_new, g_new, ne, ok = strong_wolfe(fun, x, f, g, d, t0, state.c1, state.c2, state.max_ls_evals)
        state.n_evals += ne
        if t == 0.0:
            # no decrease along the quasi-Newton direction: steepest descent from scratch
            state.fallbacks += 1
            state.clear_history()
            d = -g
            t0 = min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
            t, f_new, g_new, ne, ok = strong_wolfe(fun, x, f, g, d, t0, state.c1, state.c2, state.max_ls_evals)
            state.n_evals += ne
            if t == 0.0:
                return x, "line_search_failed"
        s = t * d
        x = x + s
        state.push(s, g_new - g)
        state.n_iter += 1
        if (f - f_new) <= state.rel_tol * max(abs(f), 1e-300):
            state.stall += 1
        else:
            state.stall = 0
        state.f, state.g = f_new, g_new
        if callback is not None and callback(state, x):
            return x, "callback"
        if state.stall >= state.stall_window:
            return x, "stalled"
    return x, "max_iters"
