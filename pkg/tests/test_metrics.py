import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wavepinn.metrics import GridField, error_summary, masked_ssp, ssp_1d, ssp_2d
from wavepinn.wave_theory import DomainError

fields = arrays(float, (6, 8), elements=st.floats(-10, 10))


def direct_ssp(a, b):
    # Parseval: the unnormalised DFT scales every norm by the same factor
    m = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if m == 0:
        return 0.0
    a, b = a / m, b / m
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0 else np.linalg.norm(a - b) / den


@settings(max_examples=100, deadline=None)
@given(fields, fields)
def test_ssp_bounds_symmetry_and_parseval(a, b):
    s = ssp_2d(a, b)
    assert 0.0 <= s <= 1.0 + 1e-12
    assert s == pytest.approx(ssp_2d(b, a), abs=1e-12)
    assert s == pytest.approx(direct_ssp(a, b), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 32, elements=st.floats(-5, 5)), st.floats(0.1, 10))
def test_ssp_1d_scale_invariance(a, c):
    b = np.roll(a, 3) + 0.1
    assert ssp_1d(c * a, c * b) == pytest.approx(ssp_1d(a, b), abs=1e-10)


def test_ssp_reference_values():
    y = np.random.default_rng(0).normal(size=(10, 12))
    assert ssp_2d(y, y) == 0.0
    assert ssp_2d(y, -y) == pytest.approx(1.0, abs=1e-12)
    assert ssp_2d(y, np.zeros_like(y)) == pytest.approx(1.0, abs=1e-12)
    assert ssp_2d(y, 2 * y) == pytest.approx(1 / 3, abs=1e-12)
    assert ssp_2d(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0


def test_ssp_shape_checks():
    with pytest.raises(DomainError):
        ssp_2d(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(DomainError):
        ssp_1d(np.zeros(3), np.zeros((3, 1)))
    a = GridField(np.ones((3, 3)), 0, 1, 0, 1)
    b = GridField(np.ones((3, 3)), 0, 2, 0, 1)
    with pytest.raises(DomainError):
        ssp_2d(a, b)


def test_masked_ssp_ignores_outside_cells():
    a = np.ones((4, 4))
    b = a.copy()
    b[0, 0] = 100.0
    mask = np.ones((4, 4), bool)
    mask[0, 0] = False
    assert masked_ssp(a, b, mask) == 0.0
    assert masked_ssp(a, b, np.ones((4, 4), bool)) > 0.5


def test_grid_field_axes_and_validation():
    f = GridField.from_function(lambda X, T: X + 10 * T, np.arange(0, 2.5, 0.5), np.arange(0, 1.1, 0.1),
                                quantity="elevation", z=0.0)
    assert f.nx == 5 and f.nt == 11
    assert np.allclose(f.x, [0, 0.5, 1, 1.5, 2])
    X, T = f.mesh()
    assert np.allclose(f.values, X + 10 * T)
    assert f.meta["z"] == 0.0
    with pytest.raises(DomainError):
        GridField(np.ones(3), 0, 1, 0, 1)
    with pytest.raises(DomainError):
        GridField(np.full((2, 2), np.nan), 0, 1, 0, 1)
    with pytest.raises(DomainError):
        GridField(np.ones((2, 2)), 0, 0, 0, 1)


def test_error_summary():
    s = error_summary(np.array([[0.0, 1.0], [2.0, 3.0]]), np.array([[0.0, 1.0], [2.0, 5.0]]))
    assert s["mse"] == pytest.approx(1.0)
    assert s["max_abs"] == pytest.approx(2.0)


def test_ssp_of_tiny_fields_does_not_underflow():
    y = np.random.default_rng(1).normal(size=(5, 7))
    assert ssp_2d(1e-170 * y, np.zeros_like(y)) == 1.0
    assert ssp_2d(1e-170 * y, 2e-170 * y) == pytest.approx(1 / 3, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.integers(0, 1000))
def test_ssp_scale_law(c, seed):
    y = np.random.default_rng(seed).normal(size=(6, 9))
    assert ssp_2d(y, c * y) == pytest.approx(abs(1 - c) / (1 + c), abs=1e-12)


# a unit sine over whole periods against perturbed copies; shifting the phase by
# d gives |sin(d/2)|, scaling the amplitude by c gives |1 - c| / (1 + c)
PERTURBED_SINES = [
    ("phase", np.pi / 6, 0.25881904510252074),
    ("phase", np.pi / 2, 0.7071067811865476),
    ("phase", np.pi, 1.0),
    ("amplitude", 0.5, 1 / 3),
    ("amplitude", 0.9, 0.05263157894736842),
]


@pytest.mark.parametrize("kind,p,expected", PERTURBED_SINES)
def test_ssp_perturbed_sine_table(kind, p, expected):
    s = np.linspace(0, 4 * np.pi, 200, endpoint=False)
    ref = np.sin(s)
    other = np.sin(s + p) if kind == "phase" else p * ref
    assert ssp_1d(ref, other) == pytest.approx(expected, abs=1e-12)
