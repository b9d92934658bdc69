import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wavepinn import autodiff as ad
from wavepinn.balancing import LOSS_FLOOR, BalancerState, relobralo_update, scaled_softmax, total_loss


@settings(max_examples=100, deadline=None)
@given(arrays(float, 5, elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_scaled_softmax_sums_to_m_and_is_shift_invariant(r, c):
    s = scaled_softmax(r, 5)
    assert s.sum() == pytest.approx(5.0, rel=1e-12)
    assert np.all(s >= 0)
    assert np.allclose(scaled_softmax(r + c, 5), s, rtol=1e-9, atol=1e-12)


def test_scaled_softmax_large_ratios_do_not_overflow():
    s = scaled_softmax(np.array([1e4, 0.0, -1e4]), 3)
    assert np.allclose(s, [3.0, 0.0, 0.0])


def test_first_update_only_records_reference():
    st_ = BalancerState(3)
    w = relobralo_update(st_, [1.0, 2.0, 3.0])
    assert np.array_equal(w, np.ones(3))
    assert np.array_equal(st_.initial, [1.0, 2.0, 3.0])


def test_rho_override_selects_lookback():
    # rho = 0 uses the initial-loss softmax in the history term
    a = BalancerState(2, alpha=0.5, tau=1.0)
    relobralo_update(a, [1.0, 1.0])
    relobralo_update(a, [2.0, 1.0], rho=0.0)
    nu = scaled_softmax(np.array([2.0, 1.0]), 2)
    assert np.allclose(a.weights, 0.5 * nu + 0.5 * nu)
    b = BalancerState(2, alpha=0.5, tau=1.0)
    relobralo_update(b, [1.0, 1.0])
    relobralo_update(b, [2.0, 1.0], rho=1.0)
    assert np.allclose(b.weights, 0.5 * np.ones(2) + 0.5 * nu)


def test_fixed_mode_keeps_unit_weights():
    st_ = BalancerState(2, fixed=True)
    for L in ([1.0, 5.0], [0.1, 9.0], [3.0, 3.0]):
        w = relobralo_update(st_, L)
    assert np.array_equal(w, np.ones(2))


def test_reproducible_draws_and_floor():
    a, b = BalancerState(3, seed=11), BalancerState(3, seed=11)
    rng = np.random.default_rng(0)
    for _ in range(50):
        L = rng.uniform(0, 1, 3)
        assert np.array_equal(relobralo_update(a, L), relobralo_update(b, L))
    c = BalancerState(2)
    relobralo_update(c, [0.0, 1.0])
    assert c.initial[0] == LOSS_FLOOR
    w = relobralo_update(c, [0.0, 1.0])
    assert np.all(np.isfinite(w))


def test_growing_component_gains_weight():
    st_ = BalancerState(2, tau=1.0, seed=0)
    relobralo_update(st_, [1.0, 1.0])
    for k in range(1, 30):
        relobralo_update(st_, [1.0 + 0.1 * k, 1.0])
    assert st_.weights[0] > st_.weights[1]


def test_validation():
    with pytest.raises(ValueError):
        BalancerState(0)
    with pytest.raises(ValueError):
        BalancerState(2, alpha=1.5)
    st_ = BalancerState(2)
    with pytest.raises(ValueError):
        relobralo_update(st_, [1.0, 2.0, 3.0])
    with pytest.raises(ad.NumericError):
        relobralo_update(st_, [np.inf, 1.0])


def test_total_loss_weighted_sum_and_gradient():
    p = ad.parameter(2.0)
    comps = {"a": ad.square(p), "b": p * 3.0}
    out = total_loss({"b": 0.5, "a": 2.0}, comps)
    assert float(out.value) == pytest.approx(2.0 * 4.0 + 0.5 * 6.0)
    ad.backward(out)
    assert float(p.grad) == pytest.approx(2.0 * 4.0 + 0.5 * 3.0)
    with pytest.raises(ValueError):
        total_loss([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        total_loss([-1.0], [1.0])
