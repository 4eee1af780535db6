"""Grids, fields, spectral calculus, states and snapshots."""
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magctl.core import (
    GaussianParams,
    GridMismatchError,
    ScalarField,
    VectorField,
    WaveFunction,
    boundary_mass,
    fit_gaussian,
    gaussian_state,
    inner_product,
    l2_norm,
    make_grid,
    projective_distance,
    read_snapshot,
    sample,
    spectral_divergence,
    spectral_gradient,
    spectral_laplacian,
    write_snapshot,
)


# ---- grids ---------------------------------------------------------------


def test_torus_spacing():
    g = make_grid("torus", 1, 8)
    assert g.spacing == pytest.approx((2 * np.pi / 8,))
    assert g.axes[0][0] == 0.0


def test_line_spacing():
    g = make_grid("line", 1, 8, 4)
    assert g.spacing == (1.0,)
    assert g.axes[0][0] == -4.0


def test_point_cap():
    with pytest.raises(ValueError, match="cap"):
        make_grid("torus", 2, 2048)


def test_line_needs_half_width():
    with pytest.raises(ValueError):
        make_grid("line", 1, 8)


def test_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        make_grid("torus", 1, 12)


def test_nyquist_wavenumber_zeroed():
    g = make_grid("torus", 1, 8)
    assert g.wavenumbers[0][4] == 0.0
    assert list(g.freq_lattice[0]) == [0, 1, 2, 3, -4, -3, -2, -1]


# ---- sampling and calculus --------------------------------------------------


def test_sample_zero():
    g = make_grid("torus", 2, 16)
    assert not np.any(sample(0, g).values)


def test_sample_cos():
    g = make_grid("torus", 1, 8)
    f = sample("cos(x)", g)
    np.testing.assert_allclose(f.values, np.cos(2 * np.pi * np.arange(8) / 8), atol=1e-15)


def test_sample_gaussian_line():
    g = make_grid("line", 1, 64, 6)
    f = sample("exp(-r2/2)", g)
    np.testing.assert_allclose(f.values, np.exp(-g.axes[0] ** 2 / 2))


def test_sample_rejects_nonfinite():
    g = make_grid("line", 1, 8, 4)
    with pytest.raises(ValueError):
        sample("1/x", g)


def test_gradient_of_cos():
    g = make_grid("torus", 1, 64)
    d = spectral_gradient(sample("cos(x)", g)).components[0].values
    np.testing.assert_allclose(d, -np.sin(g.axes[0]), atol=1e-12)


def test_gradient_of_constant():
    g = make_grid("torus", 2, 16)
    grad = spectral_gradient(sample(3.0, g))
    assert grad.is_zero() or max(np.max(np.abs(c.values)) for c in grad.components) < 1e-14


def test_gradient_of_sin3x():
    g = make_grid("torus", 1, 64)
    d = spectral_gradient(sample("sin(3*x)", g)).components[0].values
    np.testing.assert_allclose(d, 3 * np.cos(3 * g.axes[0]), atol=1e-12)


def test_divergence_of_rotation_field():
    g = make_grid("line", 2, 64, 8)
    x1, x2 = g.coords
    F = VectorField.from_arrays(g, [-x2, x1])
    assert np.max(np.abs(spectral_divergence(F).values)) < 1e-12


def test_laplacian_sin_and_one():
    g = make_grid("torus", 1, 32)
    lap = spectral_laplacian(sample("sin(x)", g)).values
    np.testing.assert_allclose(lap, -np.sin(g.axes[0]), atol=1e-12)
    assert np.max(np.abs(spectral_laplacian(sample(1.0, g)).values)) < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_laplacian_is_div_grad(seed):
    rng = np.random.default_rng(seed)
    g = make_grid("torus", 2, 16)
    f = ScalarField(g, rng.standard_normal(g.shape))
    lhs = spectral_laplacian(f).values
    rhs = spectral_divergence(spectral_gradient(f)).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parseval(seed):
    rng = np.random.default_rng(seed)
    g = make_grid("line", 1, 64, 5)
    a = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    spec = np.fft.fft(a)
    freq_norm = np.sqrt(np.sum(np.abs(spec) ** 2) / 64 * g.dv)
    assert abs(l2_norm(g, a) - freq_norm) < 1e-12 * max(1.0, freq_norm)


# ---- states and distances --------------------------------------------------


def _random_state(g, seed=0):
    rng = np.random.default_rng(seed)
    return WaveFunction.normalized(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))


def test_distance_to_self_and_phase():
    g = make_grid("torus", 1, 32)
    psi = _random_state(g)
    assert projective_distance(psi, psi) == 0.0
    assert projective_distance(psi, psi.with_values(np.exp(0.7j) * psi.values)) < 1e-14


def test_distance_orthogonal():
    g = make_grid("torus", 1, 32)
    x = g.axes[0]
    a = WaveFunction.normalized(g, np.sin(x))
    b = WaveFunction.normalized(g, np.cos(x))
    assert abs(inner_product(a, b)) < 1e-15
    assert projective_distance(a, b) == pytest.approx(np.sqrt(2), abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_distance_phase_invariance(seed, t1, t2):
    g = make_grid("torus", 1, 16)
    psi, chi = _random_state(g, seed), _random_state(g, seed + 1)
    base = projective_distance(psi, chi)
    moved = projective_distance(psi.with_values(np.exp(1j * t1) * psi.values),
                                chi.with_values(np.exp(1j * t2) * chi.values))
    assert 0 <= base <= 2
    assert abs(base - moved) < 1e-12
    assert abs(base - np.sqrt(max(2 - 2 * abs(inner_product(psi, chi)), 0))) < 1e-7


def test_grid_mismatch():
    a = _random_state(make_grid("torus", 1, 16))
    b = _random_state(make_grid("torus", 1, 32))
    with pytest.raises(GridMismatchError):
        projective_distance(a, b)


def test_state_norm_checked():
    g = make_grid("torus", 1, 8)
    with pytest.raises(ValueError, match="norm"):
        WaveFunction(g, np.ones(8))


# ---- Gaussians ---------------------------------------------------------------


def test_gaussian_norm():
    g = make_grid("line", 1, 256, 10)
    assert abs(gaussian_state(g, 1.0).norm() - 1) < 1e-10


def test_chirp_leaves_modulus():
    g = make_grid("line", 2, 64, 8)
    a = gaussian_state(g, 1.0, 0.0)
    b = gaussian_state(g, 1.0, 5.0)
    np.testing.assert_allclose(np.abs(a.values), np.abs(b.values), atol=1e-15)


def test_gaussian_rejects_bad_width():
    g = make_grid("line", 1, 64, 8)
    with pytest.raises(ValueError):
        gaussian_state(g, 0.0)
    with pytest.raises(ValueError):
        GaussianParams(0.0, -1.0, 0.0)


def test_gaussian_boundary_violation():
    g = make_grid("line", 1, 64, 2)
    with pytest.raises(ValueError, match="shell"):
        gaussian_state(g, 0.05)


def test_fit_roundtrip():
    g = make_grid("line", 2, 64, 8)
    params, res = fit_gaussian(gaussian_state(g, 0.7, 1.3, 0.2))
    assert params.a == pytest.approx(0.7, abs=1e-6)
    assert params.b == pytest.approx(1.3, abs=1e-6)
    assert params.theta == pytest.approx(0.2, abs=1e-6)
    assert res <= 1e-8


def test_fit_member_of_family():
    g = make_grid("line", 2, 64, 8)
    _, res = fit_gaussian(gaussian_state(g, 1.0, 0.0, 0.0))
    assert res <= 1e-10


def test_fit_first_excited_state():
    g = make_grid("line", 1, 256, 10)
    x = g.axes[0]
    psi = WaveFunction.normalized(g, x * np.exp(-x**2 / 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, res = fit_gaussian(psi)
    assert res >= 0.5


@settings(max_examples=12, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-5.0, 5.0), st.floats(0.0, 6.0))
def test_fit_recovers_parameters(a, b, theta):
    g = make_grid("line", 1, 512, 12)
    params, res = fit_gaussian(gaussian_state(g, a, b, theta))
    assert params.a == pytest.approx(a, abs=1e-6)
    assert params.b == pytest.approx(b, abs=1e-6)
    assert res <= 1e-6


def test_boundary_mass():
    g = make_grid("line", 1, 256, 10)
    assert boundary_mass(gaussian_state(g, 4.0)) <= 1e-12
    for d in (1, 2):
        gd = make_grid("line", d, 64, 4)
        const = WaveFunction.normalized(gd, np.ones(gd.shape))
        assert boundary_mass(const) == pytest.approx(1 - 0.9**d, abs=0.04)
    with pytest.raises(ValueError):
        boundary_mass(_random_state(make_grid("torus", 1, 8)))


# ---- snapshots -----------------------------------------------------------------


def test_snapshot_roundtrip(tmp_path):
    g = make_grid("line", 2, (8, 16), 3.0)
    psi = _random_state(g, 4)
    path = tmp_path / "psi.mswf"
    write_snapshot(path, psi)
    raw = path.read_bytes()
    assert raw[:5] == b"MSWF1"
    assert len(raw) == 5 + 2 + 8 + 8 + 16 * g.size
    back = read_snapshot(path)
    assert back.grid == g
    assert np.array_equal(back.values, psi.values)


def test_snapshot_torus_width_zero(tmp_path):
    g = make_grid("torus", 1, 8)
    path = tmp_path / "t.mswf"
    write_snapshot(path, _random_state(g))
    assert read_snapshot(path).grid == g
