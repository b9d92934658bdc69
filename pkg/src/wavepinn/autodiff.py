"""Differentiation engine.

Two pieces work together:

* ``Var`` is a reverse-mode tape over numpy arrays with a deliberately small
  primitive set (add, multiply, square, affine maps, tanh, sin, cos, exp, mean
  and a few structural ops).  Anything else raises ``UnsupportedPrimitiveError``.
* Jets propagate input-coordinate derivatives forward.  A jet is a ``Var`` whose
  value has shape ``(S, N, C)``: slot 0 is the function value, followed by first
  partials along the directions in ``Layout.first`` and diagonal second partials
  along ``Layout.second``.  Jet primitives are ordinary tape nodes, so one
  reverse sweep over a jet computation yields parameter gradients of any loss
  built from input derivatives.

Only diagonal second derivatives are tracked; mixed partials are never needed
by the potential-flow residuals.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels


class UnsupportedPrimitiveError(TypeError):
    """An operation outside the supported primitive set was applied to a Var."""


class NumericError(FloatingPointError):
    """Non-finite values where finite ones are required."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    """A node of the reverse-mode tape."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=float) if not isinstance(value, np.ndarray) else value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- numpy interop: every ufunc is routed through the primitive table
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"{ufunc.__name__}.{method} is not a supported primitive")
        fn = _UFUNCS.get(ufunc)
        if fn is None:
            raise UnsupportedPrimitiveError(f"'{ufunc.__name__}' is not a supported primitive")
        return fn(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        fn = _FUNCTIONS.get(func)
        if fn is None:
            raise UnsupportedPrimitiveError(f"'{func.__name__}' is not a supported primitive")
        return fn(*args, **kwargs)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        if p == 1:
            return self
        raise UnsupportedPrimitiveError("only the square power is supported")

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise UnsupportedPrimitiveError("division by a Var is not a supported primitive")
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _node(value, parents, backward_fn):
    """Create a tape node; drops the closure when no parent needs a gradient."""
    out = Var(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=float))


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


# --------------------------------------------------------------------------- scalar-array primitives

def add(a, b):
    a, b = as_var(a), as_var(b)
    sa, sb = a.value.shape, b.value.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def square(a):
    a = as_var(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def tanh(a):
    a = as_var(a)
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sin(a):
    a = as_var(a)
    av = a.value
    return _node(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a):
    a = as_var(a)
    av = a.value
    return _node(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def exp(a):
    a = as_var(a)
    y = np.exp(a.value)
    return _node(y, (a,), lambda g: (g * y,))


def affine(x, w, b=None):
    """x @ w (+ b) for 2-D x."""
    x, w = as_var(x), as_var(w)
    xv, wv = x.value, w.value
    if b is None:
        return _node(xv @ wv, (x, w), lambda g: (g @ wv.T, xv.T @ g))
    b = as_var(b)
    return _node(xv @ wv + b.value, (x, w, b),
                 lambda g: (g @ wv.T, xv.T @ g, _unbroadcast(g, b.value.shape)))


def sum_(a, axis=None):
    a = as_var(a)
    shape = a.value.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.asarray(a.value.sum(axis=axis)), (a,), bw)


def mean(a):
    a = as_var(a)
    n = a.value.size
    shape = a.value.shape
    return _node(np.asarray(a.value.mean()), (a,), lambda g: (np.full(shape, g / n),))


def getitem(a, idx):
    a = as_var(a)
    shape = a.value.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), bw)


def transpose(a):
    a = as_var(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_var(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(items, axis=-1):
    items = [as_var(v) for v in items]
    vals = [v.value for v in items]
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate(vals, axis=axis), tuple(items),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(items, axis=0):
    items = [as_var(v) for v in items]
    n = len(items)
    return _node(np.stack([v.value for v in items], axis=axis), tuple(items),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


_UFUNCS = {
    np.add: add,
    np.subtract: lambda a, b: add(a, neg(b)),
    np.multiply: mul,
    np.negative: neg,
    np.square: square,
    np.tanh: tanh,
    np.sin: sin,
    np.cos: cos,
    np.exp: exp,
}

_FUNCTIONS = {
    np.mean: lambda a, axis=None: mean(a) if axis is None else _unsupported("mean with axis"),
    np.sum: lambda a, axis=None: sum_(a, axis),
    np.concatenate: lambda items, axis=0: concat(items, axis),
    np.stack: lambda items, axis=0: stack(items, axis),
    np.transpose: lambda a: transpose(a),
    np.reshape: lambda a, shape: reshape(a, shape),
}


def _unsupported(what):
    raise UnsupportedPrimitiveError(f"{what} is not a supported primitive")


def backward(loss: Var):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring gradients."""
    if loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# --------------------------------------------------------------------------- parameters

def parameter(value, name=None) -> Var:
    return Var(np.array(value, dtype=float), requires_grad=True, name=name)


@dataclass
class ParamGradient:
    """Flat gradient aligned with a parameter list."""

    vector: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def __len__(self):
        return len(self.vector)


def flatten_params(params: Sequence[Var]) -> np.ndarray:
    return np.concatenate([p.value.ravel() for p in params]) if params else np.zeros(0)


def assign_params(params: Sequence[Var], flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=float)
    i = 0
    for p in params:
        n = p.value.size
        p.value = flat[i:i + n].reshape(p.value.shape).copy()
        i += n
    if i != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, parameters need {i}")


def zero_grad(params: Iterable[Var]) -> None:
    for p in params:
        p.grad = None


def param_gradient(loss: Var, params: Sequence[Var]) -> ParamGradient:
    """Gradient of a scalar loss with respect to `params`, as one flat vector."""
    zero_grad(params)
    backward(loss)
    parts = [np.zeros(p.value.size) if p.grad is None else p.grad.ravel() for p in params]
    vec = np.concatenate(parts) if parts else np.zeros(0)
    if not np.all(np.isfinite(vec)):
        raise NumericError("non-finite parameter gradient")
    return ParamGradient(vec)


# --------------------------------------------------------------------------- jets

@dataclass(frozen=True)
class Layout:
    """Which derivative slots a jet carries.

    ``first`` lists directions with first partials; ``second`` lists directions
    (a subset of ``first``) with diagonal second partials.
    """

    first: tuple[str, ...] = ()
    second: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "first", tuple(self.first))
        object.__setattr__(self, "second", tuple(self.second))
        if not set(self.second) <= set(self.first):
            raise ValueError("second-order directions must also carry first partials")

    @property
    def size(self) -> int:
        return 1 + len(self.first) + len(self.second)

    @property
    def n_first(self) -> int:
        return len(self.first)

    def index(self, slot: str) -> int:
        """Slot index for 'value', a direction name ('x') or a doubled name ('xx')."""
        if slot == "value":
            return 0
        if slot in self.first:
            return 1 + self.first.index(slot)
        if len(slot) == 2 and slot[0] == slot[1] and slot[0] in self.second:
            return 1 + len(self.first) + self.second.index(slot[0])
        raise KeyError(f"slot {slot!r} not carried by {self}")

    @property
    def pairs(self) -> np.ndarray:
        """For each second-order slot, the index (within the first block) of its direction."""
        return np.array([self.first.index(d) for d in self.second], dtype=int)


VALUE_ONLY = Layout()


class Jet:
    """Input-derivative jet: a tape node with value shape (S, N, C) plus its layout."""

    __slots__ = ("var", "layout")

    def __init__(self, var: Var, layout: Layout):
        self.var = var
        self.layout = layout

    @property
    def data(self) -> np.ndarray:
        return self.var.value

    def slot(self, name: str) -> Var:
        """Slot as a tape node of shape (N, C)."""
        return getitem(self.var, self.layout.index(name))

    def slot_value(self, name: str) -> np.ndarray:
        return self.var.value[self.layout.index(name)]

    @property
    def value(self) -> Var:
        return self.slot("value")

    def __add__(self, other):
        other_var = other.var if isinstance(other, Jet) else _const_jet(other, self.layout, self.data.shape)
        return Jet(add(self.var, other_var), self.layout)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -np.asarray(other, dtype=float))

    def __neg__(self):
        return Jet(neg(self.var), self.layout)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        # constants scale every slot
        return Jet(mul(self.var, np.asarray(other, dtype=float)), self.layout)

    __rmul__ = __mul__


def _const_jet(c, layout, shape):
    out = np.zeros(shape)
    out[0] = c
    return Var(out)


def seed(values, direction: str | None, layout: Layout) -> Jet:
    """Jet of a coordinate: value `values`, unit first partial along `direction`.

    `values` may be a Var (e.g. a surface elevation feeding the z-input); its
    gradient receives the value-slot adjoint.
    """
    vals = values.value if isinstance(values, Var) else np.asarray(values, dtype=float)
    vals = vals.reshape(-1)
    n = vals.shape[0]
    out = np.zeros((layout.size, n, 1))
    out[0, :, 0] = vals
    if direction is not None and direction in layout.first:
        out[layout.index(direction), :, 0] = 1.0
    if isinstance(values, Var):
        shape = values.value.shape
        return Jet(_node(out, (values,), lambda g: (g[0, :, 0].reshape(shape),)), layout)
    return Jet(Var(out), layout)


def from_slots(slots: dict[str, object], layout: Layout) -> Jet:
    """Assemble a jet from per-slot arrays/Vars of shape (N,) or (N, C); missing slots are zero."""
    items = []
    ref = np.asarray(value_of(next(v for v in slots.values() if v is not None)))
    shape = ref.shape if ref.ndim == 2 else (ref.shape[0], 1)
    names = ["value"] + list(layout.first) + [d + d for d in layout.second]
    for name in names:
        v = slots.get(name)
        if v is None:
            items.append(Var(np.zeros(shape)))
        else:
            items.append(reshape(as_var(v), shape))
    return Jet(stack(items, axis=0), layout)


def jet_affine(j: Jet, w, b=None, scale: float = 1.0) -> Jet:
    """Affine map on the channel axis; the bias only enters the value slot."""
    jv = j.var
    w = as_var(w)
    data = jv.value
    S, N, C = data.shape
    wv = w.value
    flat = data.reshape(S * N, C)
    out = (flat @ wv).reshape(S, N, wv.shape[1])
    if scale != 1.0:
        out *= scale
    parents = [jv, w]
    if b is not None:
        b = as_var(b)
        out[0] += b.value
        parents.append(b)

    def bw(g):
        g2 = g.reshape(S * N, -1)
        if scale != 1.0:
            g2 = g2 * scale
        gx = (g2 @ wv.T).reshape(S, N, C) if jv.requires_grad else None
        gw = flat.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g[0].sum(axis=0)
        if scale != 1.0:
            gb = gb * scale
        return gx, gw, gb.reshape(b.value.shape)

    return Jet(_node(out, tuple(parents), bw), j.layout)


_use_kernels = _kernels.AVAILABLE


def set_fused_kernels(enabled: bool) -> bool:
    """Switch the compiled slotwise kernels on or off; returns the previous setting."""
    global _use_kernels
    prev = _use_kernels
    _use_kernels = bool(enabled) and _kernels.AVAILABLE
    return prev


def _fused_jet(j: Jet, kind: int) -> Jet:
    lay = j.layout
    data = j.var.value
    S, N, C = data.shape
    flat = np.ascontiguousarray(data).reshape(S, N * C)
    y, aux = _kernels.values(kind, flat[0])
    nf = lay.n_first
    pairs = lay.pairs.astype(np.int64)
    out = _kernels.forward(flat, y, aux, kind, nf, pairs).reshape(S, N, C)

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(S, N * C)
        return (_kernels.backward(flat, g2, y, aux, kind, nf, pairs).reshape(S, N, C),)

    return Jet(_node(out, (j.var,), bw), lay)


def _elementwise_jet(j: Jet, f0, derivs: Callable, kind: str | None = None) -> Jet:
    """Apply a scalar function slotwise.

    `f0` is f(u0); `derivs(u0, y)` returns (f', f'', f''') evaluated at u0
    (f''' is only requested when a backward pass meets second-order slots).
    """
    if kind is not None and _use_kernels:
        return _fused_jet(j, _kernels.KINDS[kind])
    lay = j.layout
    data = j.var.value
    u0 = data[0]
    nf = lay.n_first
    ns = len(lay.second)
    y = f0(u0)
    f1, f2, f3 = derivs(u0, y, need_third=False)
    out = np.empty_like(data)
    out[0] = y
    if nf:
        u1 = data[1:1 + nf]
        out[1:1 + nf] = f1 * u1
    if ns:
        u1p = data[1:1 + nf][lay.pairs]
        u2 = data[1 + nf:]
        out[1 + nf:] = f1 * u2 + f2 * u1p * u1p

    def bw(g):
        gu = np.empty_like(data)
        g0 = g[0]
        acc = g0 * f1
        if nf:
            g1 = g[1:1 + nf]
            acc = acc + f2 * np.einsum("snc,snc->nc", g1, u1)
            gu[1:1 + nf] = g1 * f1
        if ns:
            _, _, f3_ = derivs(u0, y, need_third=True)
            g2 = g[1 + nf:]
            acc = acc + f2 * np.einsum("snc,snc->nc", g2, u2) + f3_ * np.einsum("snc,snc->nc", g2, u1p * u1p)
            gu[1:1 + nf][lay.pairs] += 2.0 * f2 * g2 * u1p
            gu[1 + nf:] = g2 * f1
        gu[0] = acc
        return (gu,)

    return Jet(_node(out, (j.var,), bw), lay)


def _tanh_derivs(u0, y, need_third):
    s = 1.0 - y * y
    f2 = -2.0 * y * s
    f3 = s * (4.0 * y * y - 2.0 * s) if need_third else None
    return s, f2, f3


def _sin_derivs(u0, y, need_third):
    c = np.cos(u0)
    return c, -y, (-c if need_third else None)


def _cos_derivs(u0, y, need_third):
    s = np.sin(u0)
    return -s, -y, (s if need_third else None)


def _exp_derivs(u0, y, need_third):
    return y, y, y


def jet_tanh(j: Jet) -> Jet:
    return _elementwise_jet(j, np.tanh, _tanh_derivs, "tanh")


def jet_sin(j: Jet) -> Jet:
    return _elementwise_jet(j, np.sin, _sin_derivs, "sin")


def jet_cos(j: Jet) -> Jet:
    return _elementwise_jet(j, np.cos, _cos_derivs, "cos")


def jet_exp(j: Jet) -> Jet:
    return _elementwise_jet(j, np.exp, _exp_derivs, "exp")


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Product rule up to diagonal second order."""
    if a.layout != b.layout:
        raise ValueError("jet layouts differ")
    lay = a.layout
    nf, ns = lay.n_first, len(lay.second)
    A, B = a.data, b.data
    out = A * B
    out[1:] = A[1:] * B[0] + A[0] * B[1:]
    if ns:
        p = lay.pairs
        out[1 + nf:] += 2.0 * A[1:1 + nf][p] * B[1:1 + nf][p]

    def grad_for(G, X, Y):
        # gradient w.r.t. X of out(X, Y)
        gx = np.empty(np.broadcast_shapes(G.shape, X.shape))
        gx[0] = np.sum(G * Y, axis=0)
        gx[1:] = G[1:] * Y[0]
        if ns:
            gx[1:1 + nf][p] += 2.0 * G[1 + nf:] * Y[1:1 + nf][p]
        return _unbroadcast(gx, X.shape)

    av, bv = a.var, b.var

    def bw(g):
        return (grad_for(g, A, B) if av.requires_grad else None,
                grad_for(g, B, A) if bv.requires_grad else None)

    return Jet(_node(out, (a.var, b.var), bw), lay)


def jet_concat(jets: Sequence[Jet]) -> Jet:
    lay = jets[0].layout
    if any(j.layout != lay for j in jets):
        raise ValueError("jet layouts differ")
    return Jet(concat([j.var for j in jets], axis=-1), lay)


def jet_columns(j: Jet, cols) -> Jet:
    return Jet(getitem(j.var, (slice(None), slice(None), cols)), j.layout)


# --------------------------------------------------------------------------- single-point interface

@dataclass
class InputJet:
    """Value and partials of a scalar field at one point.  Unused slots are None."""

    value: float
    d_x: float | None = None
    d_t: float | None = None
    d_z: float | None = None
    d_xx: float | None = None
    d_zz: float | None = None


ELEVATION_LAYOUT = Layout(("x", "t"), ())
POTENTIAL_LAYOUT = Layout(("x", "t", "z"), ("x", "z"))


def forward_with_jets(component, point) -> InputJet:
    """Jet of a field at a single point.

    `component` is any object with ``jets(coords, layout)`` returning a Jet, where
    coords is a tuple of coordinate jets, or a plain callable with the same
    signature.  Two-coordinate points (x, t) get value/d_x/d_t; three-coordinate
    points (x, t, z) get all six slots.
    """
    point = tuple(float(v) for v in point)
    if not all(math.isfinite(v) for v in point):
        raise NumericError(f"non-finite input {point}")
    if len(point) == 2:
        lay, dirs = ELEVATION_LAYOUT, ("x", "t")
    elif len(point) == 3:
        lay, dirs = POTENTIAL_LAYOUT, ("x", "t", "z")
    else:
        raise ValueError("points are (x, t) or (x, t, z)")
    coords = tuple(seed(np.array([v]), d, lay) for v, d in zip(point, dirs))
    fn = component.jets if hasattr(component, "jets") else component
    with no_grad():
        out = fn(coords, lay)
    data = out.data[:, 0, 0]
    res = InputJet(float(data[0]))
    for name in lay.first:
        setattr(res, "d_" + name, float(data[lay.index(name)]))
    for name in lay.second:
        setattr(res, "d_" + name + name, float(data[lay.index(name + name)]))
    return res
