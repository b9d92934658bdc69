"""Fused loops for the slotwise jet rules of the elementwise primitives.

The transcendental values are computed by numpy (vectorised); the loops here
only combine them with the derivative slots.  Used when numba is importable;
the numpy formulation in ``autodiff`` is the reference and the fallback.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

TANH, SIN, COS, EXP = 0, 1, 2, 3
KINDS = {"tanh": TANH, "sin": SIN, "cos": COS, "exp": EXP}

AVAILABLE = njit is not None


def values(kind: int, u0: np.ndarray):
    """f(u0) and the auxiliary array the kernels need (cos for sin, sin for cos)."""
    if kind == TANH:
        return np.tanh(u0), u0
    if kind == SIN:
        return np.sin(u0), np.cos(u0)
    if kind == COS:
        return np.cos(u0), np.sin(u0)
    y = np.exp(u0)
    return y, y


if AVAILABLE:
    @njit(cache=True, inline="always")
    def _derivs(kind, y, aux):
        if kind == TANH:
            f1 = 1.0 - y * y
            f2 = -2.0 * y * f1
            f3 = f1 * (4.0 * y * y - 2.0 * f1)
        elif kind == SIN:
            f1, f2, f3 = aux, -y, -aux
        elif kind == COS:
            f1, f2, f3 = -aux, -y, aux
        else:
            f1, f2, f3 = y, y, y
        return f1, f2, f3

    @njit(cache=True, fastmath=True)
    def forward(data, y, aux, kind, nf, pairs):
        """data (S, M) slot planes, y/aux (M,) -> out (S, M)."""
        S, M = data.shape
        ns = pairs.shape[0]
        out = np.empty_like(data)
        for m in range(M):
            f1, f2, _ = _derivs(kind, y[m], aux[m])
            out[0, m] = y[m]
            for i in range(nf):
                out[1 + i, m] = f1 * data[1 + i, m]
            for j in range(ns):
                a = data[1 + pairs[j], m]
                out[1 + nf + j, m] = f1 * data[1 + nf + j, m] + f2 * a * a
        return out

    @njit(cache=True, fastmath=True)
    def backward(data, g, y, aux, kind, nf, pairs):
        S, M = data.shape
        ns = pairs.shape[0]
        gu = np.empty_like(data)
        for m in range(M):
            f1, f2, f3 = _derivs(kind, y[m], aux[m])
            acc = g[0, m] * f1
            for i in range(nf):
                gi = g[1 + i, m]
                acc += f2 * gi * data[1 + i, m]
                gu[1 + i, m] = gi * f1
            for j in range(ns):
                p = pairs[j]
                a = data[1 + p, m]
                g2 = g[1 + nf + j, m]
                acc += f2 * g2 * data[1 + nf + j, m] + f3 * g2 * a * a
                gu[1 + p, m] += 2.0 * f2 * g2 * a
                gu[1 + nf + j, m] = g2 * f1
            gu[0, m] = acc
        return gu
