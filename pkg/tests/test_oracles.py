"""Exact reference operators."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magctl.core import (
    ScalarField,
    VectorField,
    WaveFunction,
    gaussian_state,
    laplacian_array,
    make_grid,
    projective_distance,
    sample,
)
from magctl.oracles import (
    BoundaryError,
    TransportSpec,
    apply_dilation,
    apply_free_evolution,
    apply_harmonic_evolution,
    apply_magnetic_translation,
    apply_phase,
    apply_translation,
    apply_transport,
    apply_twisted_transport,
    dilate_array,
)

TORUS = make_grid("torus", 1, 256)
LINE = make_grid("line", 1, 256, 12)


def _torus_state():
    x = TORUS.axes[0]
    return WaveFunction.normalized(TORUS, np.exp(0.5 * np.cos(x)))


def _line_state(g=LINE, shift=0.0):
    x = g.coords[0]
    return WaveFunction.normalized(g, np.exp(-((x - shift) ** 2)) * (1 + 0.3j * x))


# ---- phases -----------------------------------------------------------------


def test_phase_identity_and_pi():
    psi = _torus_state()
    assert np.array_equal(apply_phase(psi, 0.0).values, psi.values)
    np.testing.assert_allclose(apply_phase(psi, np.pi).values, -psi.values, atol=1e-15)


def test_phase_preserves_norm():
    psi = _torus_state()
    out = apply_phase(psi, sample("3*sin(x)+cos(5*x)", TORUS))
    assert abs(out.norm() - psi.norm()) <= 1e-14


def test_phase_rejects_complex():
    with pytest.raises(ValueError):
        apply_phase(_torus_state(), np.full(TORUS.shape, 1j))


# ---- dilations ----------------------------------------------------------------


def test_dilation_identity():
    psi = _line_state()
    assert apply_dilation(psi, 1.0) is psi


def test_dilation_of_gaussian():
    g = make_grid("line", 2, 64, 8)
    out = apply_dilation(gaussian_state(g, 0.5), 1.5)
    assert projective_distance(out, gaussian_state(g, 0.5 * 1.5**2)) <= 1e-8


def test_dilation_group_law():
    psi = _line_state()
    back = apply_dilation(apply_dilation(psi, 1.7), 1 / 1.7)
    assert projective_distance(back, psi) <= 1e-8


def test_dilation_escape_is_error():
    g = make_grid("line", 1, 128, 6)
    with pytest.raises(BoundaryError):
        apply_dilation(gaussian_state(g, 1.0), 0.2)


def test_dilate_array_matches_closed_form():
    g = make_grid("line", 1, 256, 12)
    x = g.axes[0]
    a = np.exp(-x**2) * np.sin(x)
    out = dilate_array(g, a, 0.8)
    np.testing.assert_allclose(out, np.sqrt(0.8) * np.exp(-(0.8 * x) ** 2) * np.sin(0.8 * x), atol=1e-12)


# ---- free and harmonic evolution --------------------------------------------------


def test_free_identity():
    psi = _torus_state()
    np.testing.assert_allclose(apply_free_evolution(psi, 0.0).values, psi.values, atol=1e-15)


def test_free_plane_wave():
    x = TORUS.axes[0]
    psi = WaveFunction.normalized(TORUS, np.exp(3j * x))
    out = apply_free_evolution(psi, 0.25)
    np.testing.assert_allclose(out.values, np.exp(-0.25j * 9) * psi.values, atol=1e-14)


def test_free_gaussian_spreading():
    g = make_grid("line", 1, 512, 16)
    x = g.axes[0]
    a, sigma = 1.0, 0.3
    out = apply_free_evolution(gaussian_state(g, a), sigma)
    z = 1 + 4j * a * sigma
    exact = WaveFunction.normalized(g, z**-0.5 * np.exp(-a * x**2 / z))
    assert projective_distance(out, exact) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_free_semigroup(s1, s2):
    psi = _torus_state()
    a = apply_free_evolution(apply_free_evolution(psi, s1), s2)
    b = apply_free_evolution(psi, s1 + s2)
    assert np.max(np.abs(a.values - b.values)) <= 1e-10


def test_harmonic_identity():
    g = make_grid("line", 1, 64, 8)
    psi = _line_state(g)
    assert projective_distance(apply_harmonic_evolution(psi, 0.0), psi) <= 1e-12


def test_harmonic_ground_state():
    g = make_grid("line", 1, 64, 8)
    # exp(-x^2/2) is the ground state of -Lap + x^2
    ground = gaussian_state(g, 0.5)
    out = apply_harmonic_evolution(ground, 0.7)
    np.testing.assert_allclose(np.abs(out.values), np.abs(ground.values), atol=1e-8)
    # frozen sample: phase exp(-0.7 i) on the centre value
    assert complex(out.values[32]) == pytest.approx(0.5744925043538014 - 0.48388836108036426j, abs=1e-10)


def test_harmonic_period():
    g = make_grid("line", 1, 64, 8)
    psi = _line_state(g)
    a = apply_harmonic_evolution(psi, 0.4)
    b = apply_harmonic_evolution(psi, 0.4 + np.pi)
    assert projective_distance(a, b) <= 1e-6


# ---- translations -----------------------------------------------------------------


def test_translation_identity_and_inverse():
    psi = _line_state()
    assert projective_distance(apply_translation(psi, 0, 0.0), psi) <= 1e-14
    back = apply_translation(apply_translation(psi, 0, 1.3), 0, -1.3)
    assert np.max(np.abs(back.values - psi.values)) <= 1e-10


def test_translation_moves_centre():
    psi = _line_state()
    x = LINE.axes[0]
    mean = lambda s: float(np.sum(x * np.abs(s.values) ** 2) * LINE.dv)
    out = apply_translation(psi, 0, 1.5)
    assert mean(out) == pytest.approx(mean(psi) - 1.5, abs=1e-10)


def test_translation_escape():
    with pytest.raises(BoundaryError):
        apply_translation(_line_state(), 0, 11.0)


def test_magnetic_translation_closed_form():
    x = LINE.axes[0]
    w = np.pi / 6  # periodic on the box
    A = VectorField((sample(f"0.5*cos({w!r}*x)", LINE),))
    psi = _line_state()
    out = apply_magnetic_translation(psi, 0, 0.8, A)
    # int_0^u 0.5 cos(w (x + s)) ds = 0.5 (sin(w (x + u)) - sin(w x)) / w
    expected = apply_translation(psi, 0, 0.8).values * np.exp(-0.5j * (np.sin(w * (x + 0.8)) - np.sin(w * x)) / w)
    np.testing.assert_allclose(out.values, expected, atol=1e-9)


# ---- transport ------------------------------------------------------------------


def test_transport_identity():
    psi = _torus_state()
    spec = TransportSpec(sample("0.1*sin(x)", TORUS), 0.0)
    assert apply_transport(psi, spec) is psi


def test_transport_preserves_norm():
    out = apply_transport(_torus_state(), TransportSpec(sample("0.3*sin(x)+0.1*cos(2*x)", TORUS), 1.0))
    assert abs(out.norm() - 1) <= 1e-6


def test_transport_constant_field_is_translation():
    psi = _line_state()
    spec = TransportSpec(ScalarField(LINE, np.zeros(LINE.shape)), 0.5, linear=(0.7,))
    out = apply_transport(psi, spec)
    # f = 2 * 0.7, psi(x + t f)
    assert projective_distance(out, apply_translation(psi, 0, 0.7)) <= 1e-8


def test_transport_semigroup():
    psi = _torus_state()
    phi = sample("0.2*sin(x)", TORUS)
    a = apply_transport(apply_transport(psi, TransportSpec(phi, 0.3)), TransportSpec(phi, 0.5))
    b = apply_transport(psi, TransportSpec(phi, 0.8))
    assert projective_distance(a, b) <= 1e-6


def test_transport_frozen_values():
    out = apply_transport(_torus_state(), TransportSpec(sample("0.1*sin(x)", TORUS), 1.0))
    assert projective_distance(out, _torus_state()) == pytest.approx(0.08842644032821365, abs=1e-9)
    assert out.values[0].real == pytest.approx(0.5731167965855963, abs=1e-9)
    assert out.values[100].real == pytest.approx(0.23632343228732935, abs=1e-9)


def test_twisted_with_zero_field_is_plain():
    psi = _torus_state()
    spec = TransportSpec(sample("0.1*sin(x)", TORUS), 1.0)
    a = apply_transport(psi, spec)
    b = apply_twisted_transport(psi, spec, VectorField.zeros(TORUS))
    assert np.array_equal(a.values, b.values)


def test_twisted_frozen_gap():
    psi = _torus_state()
    spec = TransportSpec(sample("0.1*sin(x)", TORUS), 1.0)
    A = VectorField((sample("0.3*sin(x)", TORUS),))
    gap = projective_distance(apply_twisted_transport(psi, spec, A), apply_transport(psi, spec))
    assert gap == pytest.approx(0.021086257041731137, abs=1e-9)


def test_transport_boundary():
    g = make_grid("line", 1, 128, 4)
    psi = _line_state(g, shift=2.0)
    spec = TransportSpec(ScalarField(g, np.zeros(g.shape)), 1.0, linear=(-2.0,))
    with pytest.raises(BoundaryError):
        apply_transport(psi, spec)


# ---- generator consistency -----------------------------------------------------------


def _order(gen_err):
    e1, e2 = gen_err(1e-3), gen_err(5e-4)
    return np.log2(e1 / e2)


def test_free_generator_order():
    psi = _torus_state()
    gen = 1j * laplacian_array(TORUS, psi.values)

    def err(eps):
        return np.max(np.abs((apply_free_evolution(psi, eps).values - psi.values) / eps - gen))

    assert _order(err) == pytest.approx(1.0, abs=0.1)


def test_translation_generator_order():
    psi = _line_state()
    from magctl.core import derivative

    gen = derivative(LINE, psi.values, 0)

    def err(eps):
        return np.max(np.abs((apply_translation(psi, 0, eps).values - psi.values) / eps - gen))

    assert _order(err) == pytest.approx(1.0, abs=0.1)


def test_transport_generator_order():
    psi = _torus_state()
    from magctl.core import derivative

    phi = sample("0.2*sin(x)", TORUS)
    f = 2 * derivative(TORUS, phi.values, 0)
    gen = f * derivative(TORUS, psi.values, 0) + 0.5 * derivative(TORUS, f, 0) * psi.values

    def err(eps):
        out = apply_transport(psi, TransportSpec(phi, eps))
        return np.max(np.abs((out.values - psi.values) / eps - gen))

    assert _order(err) == pytest.approx(1.0, abs=0.1)


def test_dilation_generator_order():
    g = make_grid("line", 1, 256, 12)
    psi = _line_state(g)
    from magctl.core import derivative

    x = g.axes[0]
    # d/ds D_{e^s} psi at s=0 is (x d/dx + d/2) psi
    gen = x * derivative(g, psi.values, 0) + 0.5 * psi.values

    def err(eps):
        out = apply_dilation(psi, np.exp(eps))
        return np.max(np.abs((out.values - psi.values) / eps - gen))

    assert _order(err) == pytest.approx(1.0, abs=0.1)
