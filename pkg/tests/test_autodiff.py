import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavepinn import autodiff as ad
from wavepinn.network import FieldNet, Ranges


def num_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_tape_primitives_match_numerical_gradient():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)

    def f_np(x):
        h = np.tanh(x @ w + b)
        return float(np.mean(np.sin(h) * np.cos(x[:, :2]) + np.exp(0.1 * h) ** 2 - h))

    def f_ad(xv):
        h = ad.tanh(ad.affine(xv, w, b))
        return ad.mean(ad.sin(h) * ad.cos(xv[:, :2]) + ad.square(ad.exp(h * 0.1)) - h)

    xv = ad.parameter(x0)
    loss = f_ad(xv)
    assert float(loss.value) == pytest.approx(f_np(x0), rel=1e-14)
    ad.backward(loss)
    assert np.allclose(xv.grad, num_grad(f_np, x0), rtol=1e-6, atol=1e-9)


def test_numpy_ufuncs_route_through_primitives():
    x = ad.parameter([0.3, -0.2])
    y = np.sum(np.tanh(x) * np.sin(x))
    ad.backward(y)
    expected = (1 - np.tanh(x.value) ** 2) * np.sin(x.value) + np.tanh(x.value) * np.cos(x.value)
    assert np.allclose(x.grad, expected)


@pytest.mark.parametrize("op", [lambda v: np.log(v), lambda v: np.sqrt(v), lambda v: v ** 3,
                                lambda v: v / v,
                                lambda v: np.maximum(v, 0)])
def test_unsupported_primitives_raise(op):
    v = ad.parameter([1.0, 2.0])
    with pytest.raises(ad.UnsupportedPrimitiveError):
        op(v)


def test_gradients_accumulate_over_shared_nodes():
    x = ad.parameter(2.0)
    y = x * x + x  # dy/dx = 2x + 1
    ad.backward(ad.sum_(y))
    assert float(x.grad) == pytest.approx(5.0)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.parameter([1.0, 2.0]) * 2.0)


def test_broadcast_gradients_unbroadcast():
    b = ad.parameter(np.zeros(3))
    x = ad.Var(np.ones((5, 3)))
    ad.backward(ad.sum_(x + b))
    assert np.allclose(b.grad, 5.0)


def test_no_grad_builds_no_tape():
    p = ad.parameter([1.0])
    with ad.no_grad():
        y = ad.tanh(p * 2.0)
    assert not y.requires_grad and y._parents == ()


def test_flatten_assign_roundtrip():
    ps = [ad.parameter(np.arange(6.0).reshape(2, 3)), ad.parameter([7.0])]
    flat = ad.flatten_params(ps)
    ad.assign_params(ps, flat * 2)
    assert np.allclose(ad.flatten_params(ps), flat * 2)
    with pytest.raises(ValueError):
        ad.assign_params(ps, np.zeros(3))


def test_param_gradient_rejects_non_finite():
    p = ad.parameter([1e200])
    with pytest.raises(ad.NumericError), np.errstate(over="ignore"):
        ad.param_gradient(ad.sum_(ad.square(ad.square(p))), [p])


def test_layout_indexing():
    lay = ad.Layout(("x", "t", "z"), ("x", "z"))
    assert lay.size == 6
    assert [lay.index(s) for s in ("value", "x", "t", "z", "xx", "zz")] == list(range(6))
    assert list(lay.pairs) == [0, 2]
    with pytest.raises(KeyError):
        lay.index("tt")
    with pytest.raises(ValueError):
        ad.Layout(("x",), ("z",))


LAY = ad.Layout(("x", "t"), ("x", "t"))


def jet_of(fn, x, t):
    """Evaluate a jet-level function of two coordinate jets."""
    return fn(ad.seed(x, "x", LAY), ad.seed(t, "t", LAY)).data


@pytest.mark.parametrize("fused", [True, False])
@pytest.mark.parametrize("name,f,d1,d2", [
    ("tanh", np.tanh, lambda u: 1 - np.tanh(u) ** 2, lambda u: -2 * np.tanh(u) * (1 - np.tanh(u) ** 2)),
    ("sin", np.sin, np.cos, lambda u: -np.sin(u)),
    ("cos", np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u)),
    ("exp", np.exp, np.exp, np.exp),
])
def test_elementwise_jet_chain_rule(fused, name, f, d1, d2):
    prev = ad.set_fused_kernels(fused)
    try:
        x = np.linspace(-1, 1, 7)
        t = np.linspace(0.2, 0.9, 7)
        jf = getattr(ad, "jet_" + name)
        # u = 0.7 x^2 + 1.3 t, so u_x = 1.4x, u_xx = 1.4, u_t = 1.3, u_tt = 0
        d = jet_of(lambda a, b: jf(ad.jet_mul(a, a) * 0.7 + b * 1.3), x, t)
        u = 0.7 * x ** 2 + 1.3 * t
        assert np.allclose(d[0, :, 0], f(u))
        assert np.allclose(d[1, :, 0], d1(u) * 1.4 * x)
        assert np.allclose(d[2, :, 0], d1(u) * 1.3)
        assert np.allclose(d[3, :, 0], d2(u) * (1.4 * x) ** 2 + d1(u) * 1.4)
        assert np.allclose(d[4, :, 0], d2(u) * 1.3 ** 2)
    finally:
        ad.set_fused_kernels(prev)


def _net_loss(net, x, t, fused):
    prev = ad.set_fused_kernels(fused)
    try:
        j = net.jets((ad.seed(x, "x", LAY), ad.seed(t, "t", LAY)), LAY)
        loss = ad.mean(ad.square(j.slot("xx") + j.slot("t")) + ad.square(j.slot("value")))
        return float(loss.value), ad.param_gradient(loss, net.parameters()).vector
    finally:
        ad.set_fused_kernels(prev)


def test_fused_and_reference_paths_agree():
    if not ad._kernels.AVAILABLE:
        pytest.skip("fused kernels unavailable")
    net = FieldNet(Ranges((0, 5), (0, 3)), 2, 12, n_freq=4, rng=np.random.default_rng(2))
    rng = np.random.default_rng(3)
    x, t = rng.uniform(0, 5, 30), rng.uniform(0, 3, 30)
    l1, g1 = _net_loss(net, x, t, True)
    l2, g2 = _net_loss(net, x, t, False)
    assert l1 == pytest.approx(l2, rel=1e-12)
    assert np.allclose(g1, g2, rtol=1e-9, atol=1e-12)


def test_jet_loss_parameter_gradient_matches_finite_difference():
    net = FieldNet(Ranges((0, 5), (0, 3)), 2, 8, n_freq=3, rng=np.random.default_rng(4))
    rng = np.random.default_rng(5)
    x, t = rng.uniform(0, 5, 10), rng.uniform(0, 3, 10)
    params = net.parameters()
    theta = ad.flatten_params(params)
    _, g = _net_loss(net, x, t, True)

    def f(th):
        ad.assign_params(params, th)
        return _net_loss(net, x, t, True)[0]

    for _ in range(5):
        v = rng.normal(size=theta.size)
        h = 1e-6
        fd = (f(theta + h * v) - f(theta - h * v)) / (2 * h)
        assert g @ v == pytest.approx(fd, rel=1e-5)
    ad.assign_params(params, theta)


def test_seed_from_var_passes_value_adjoint():
    z = ad.parameter([0.5, -0.25])
    lay = ad.Layout(("z",), ("z",))
    j = ad.seed(z, "z", lay)
    out = ad.jet_mul(j, j)  # z^2: value z^2, z-slot 2z, zz-slot 2
    ad.backward(ad.sum_(out.slot("value")))
    assert np.allclose(z.grad, 2 * z.value)
    assert np.allclose(out.slot_value("z")[:, 0], 2 * z.value)
    assert np.allclose(out.slot_value("zz")[:, 0], 2.0)


def test_from_slots_fills_missing_with_zero():
    lay = ad.Layout(("x", "t"))
    j = ad.from_slots({"value": np.ones(3), "t": np.full(3, 2.0)}, lay)
    assert j.data.shape == (3, 3, 1)
    assert np.allclose(j.slot_value("x"), 0.0) and np.allclose(j.slot_value("t"), 2.0)


def test_forward_with_jets_on_closed_form():
    # phi = sin(x) * exp(z) * cos(t)
    def fn(coords, lay):
        x, t, z = coords
        return ad.jet_mul(ad.jet_mul(ad.jet_sin(x), ad.jet_exp(z)), ad.jet_cos(t))

    p = (0.3, 0.7, -0.2)
    r = ad.forward_with_jets(fn, p)
    sx, cx, ez, ct, st_ = np.sin(.3), np.cos(.3), np.exp(-.2), np.cos(.7), np.sin(.7)
    assert r.value == pytest.approx(sx * ez * ct)
    assert r.d_x == pytest.approx(cx * ez * ct)
    assert r.d_t == pytest.approx(-sx * ez * st_)
    assert r.d_z == pytest.approx(sx * ez * ct)
    assert r.d_xx == pytest.approx(-sx * ez * ct)
    assert r.d_zz == pytest.approx(sx * ez * ct)
    r2 = ad.forward_with_jets(lambda c, lay: ad.jet_mul(c[0], c[1]), (2.0, 3.0))
    assert (r2.value, r2.d_x, r2.d_t, r2.d_xx) == (6.0, 3.0, 2.0, None)
    with pytest.raises(ad.NumericError):
        ad.forward_with_jets(fn, (np.nan, 0.0, 0.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3))
def test_jet_product_rule_property(x0, t0, c):
    d = jet_of(lambda a, b: ad.jet_mul(ad.jet_sin(a * c), ad.jet_tanh(b)), np.array([x0]), np.array([t0]))
    s, co, th = np.sin(c * x0), np.cos(c * x0), np.tanh(t0)
    assert d[0, 0, 0] == pytest.approx(s * th, abs=1e-12)
    assert d[1, 0, 0] == pytest.approx(c * co * th, abs=1e-12)
    assert d[3, 0, 0] == pytest.approx(-c * c * s * th, abs=1e-12)
    assert d[4, 0, 0] == pytest.approx(s * (-2 * th * (1 - th ** 2)), abs=1e-12)
