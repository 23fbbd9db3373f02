import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boalab.discretization import (
    Grid,
    MolecularState,
    NucleonicState,
    fiber_density,
    fourier_norm,
    gaussian_packet,
    gaussian_values,
    inner,
    integrate,
    kinetic_apply,
    kinetic_array,
    kinetic_cutoff,
    kinetic_expectation,
    load_state,
    norm,
    save_state,
)
from boalab.errors import BoundaryError, ConfigError
from boalab.oracles import gaussian_kinetic_expectation, gaussian_second_derivative


def random_state(grid, m, rng):
    v = rng.normal(size=grid.shape + (m,)) + 1j * rng.normal(size=grid.shape + (m,))
    return v / norm(grid, v)


def test_grid_validation():
    with pytest.raises(ConfigError):
        Grid.uniform(1, 1.0, 8)
    with pytest.raises(ConfigError):
        Grid.uniform(1, 1.0, 48)
    g = Grid.uniform(2, 3.0, 32, offset=True)
    assert g.shape == (32, 32)
    assert np.allclose(g.spacing, 6.0 / 32)
    assert not np.any(np.all(g.points() == 0, axis=-1))
    assert Grid.from_dict(g.to_dict()) == g


def test_plane_wave_is_kinetic_eigenfunction():
    g = Grid.uniform(1, np.pi, 64)
    x = g.points()[..., 0]
    k, eps = 5, 0.3
    psi = np.exp(1j * k * x)[..., None]
    assert np.allclose(kinetic_array(g, eps, psi), 0.5 * eps**2 * k**2 * psi, atol=1e-12)
    assert np.allclose(kinetic_array(g, eps, np.ones((64, 1))), 0, atol=1e-12)


def test_kinetic_matches_gaussian_second_derivative():
    g = Grid.uniform(1, 10.0, 512)
    eps, x0, w, k0 = 0.1, 0.5, 0.6, 0.4
    psi = gaussian_values(g, x0, w, k0, eps)
    expected = -0.5 * eps**2 * gaussian_second_derivative(g, x0, w, k0, eps)
    assert np.max(np.abs(kinetic_array(g, eps, psi) - expected)) < 1e-10


def test_kinetic_self_adjoint(rng):
    g = Grid.uniform(1, 4.0, 64)
    a, b = random_state(g, 2, rng), random_state(g, 2, rng)
    assert abs(inner(g, a, kinetic_array(g, 0.2, b)) - inner(g, kinetic_array(g, 0.2, a), b)) < 1e-10


def test_parseval(rng):
    g = Grid.uniform(2, 2.0, 16)
    v = random_state(g, 3, rng)
    assert abs(fourier_norm(g, v) - norm(g, v)) < 1e-10


def test_kinetic_cutoff_limits_and_idempotency(rng):
    g = Grid.uniform(1, 4.0, 64)
    psi = MolecularState(g, random_state(g, 2, rng), 0.1)
    top = 0.5 * 0.1**2 * np.max(g.k_squared())
    assert np.allclose(kinetic_cutoff(top + 1, psi).values, psi.values, atol=1e-13)
    zero = kinetic_cutoff(0.0, psi).values
    assert np.allclose(zero, zero.mean(axis=0), atol=1e-13)
    once = np.fft.fft(kinetic_cutoff(1e-2, psi).values, axis=0)
    twice = np.fft.fft(kinetic_cutoff(1e-2, kinetic_cutoff(1e-2, psi)).values, axis=0)
    assert np.allclose(once, twice, atol=1e-13)


def test_kinetic_cutoff_norm_matches_fourier_sum():
    g = Grid.uniform(1, 10.0, 256)
    eps = 0.1
    psi = NucleonicState(g, gaussian_values(g, 0.0, 0.5, 0.6, eps)[..., None], eps)
    cut_e = 0.5 * 0.6**2
    out = kinetic_cutoff(cut_e, psi)
    coeffs = np.fft.fft(psi.values[:, 0])
    k = 2 * np.pi * np.fft.fftfreq(256, g.spacing[0])
    keep = 0.5 * eps**2 * k**2 <= cut_e
    expected = np.sqrt(np.sum(np.abs(coeffs[keep]) ** 2) * g.cell_volume / 256)
    assert abs(out.norm() - expected) < 1e-10
    assert 0.3 < out.norm() ** 2 < 0.7


def test_fiber_density(rng):
    g = Grid.uniform(1, 5.0, 128)
    psi = gaussian_packet(g, 0.0, 0.5, 0.0, 0.1, spinor=[1.0, 1j])
    assert abs(integrate(g, fiber_density(psi)) - 1) < 1e-10
    scalar = gaussian_values(g, 0.0, 0.5, 0.0, 0.1)
    assert np.allclose(fiber_density(psi), np.abs(scalar) ** 2, atol=1e-14)
    v = rng.normal(size=(128, 3)) + 1j * rng.normal(size=(128, 3))
    assert np.allclose(fiber_density(MolecularState(g, v, 0.1)), sum(np.abs(v[:, a]) ** 2 for a in range(3)))


def test_gaussian_packet_moments():
    g = Grid.uniform(1, 10.0, 512)
    eps, w, k0 = 0.1, 0.5, 0.7
    psi = gaussian_packet(g, 1.0, w, 0.0, eps)
    x = g.points()[..., 0]
    assert abs(integrate(g, x * fiber_density(psi)) - 1.0) < 1e-8
    moving = gaussian_packet(g, 0.0, w, k0, eps)
    assert abs(kinetic_expectation(g, eps, moving.values) - gaussian_kinetic_expectation(w, k0, eps)) < 1e-8


def test_orthogonal_spinors_and_boundary():
    g = Grid.uniform(1, 5.0, 128)
    a = gaussian_packet(g, 0.0, 0.5, 0.2, 0.1, spinor=[1, 1])
    b = gaussian_packet(g, 0.3, 0.5, -0.2, 0.1, spinor=[1, -1])
    assert abs(a.inner(b)) < 1e-12
    with pytest.raises(BoundaryError):
        gaussian_packet(g, 4.0, 0.5, 0.0, 0.1)


def test_state_roundtrip(tmp_path, rng):
    g = Grid.uniform(2, 2.0, 16)
    psi = MolecularState(g, random_state(g, 2, rng), 0.05)
    save_state(tmp_path / "s.bin", psi)
    back = load_state(tmp_path / "s.bin")
    assert isinstance(back, MolecularState)
    assert back.eps == 0.05 and back.grid == g
    assert np.allclose(back.values, psi.values, atol=1e-6)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:4] == b"BOAS"


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(-1, 1))
def test_kinetic_energy_bounded_in_eps(eps, k0):
    g = Grid.uniform(1, 8.0, 1024)
    psi = gaussian_values(g, 0.0, 0.6, k0, eps)[..., None]
    ke = kinetic_expectation(g, eps, psi)
    assert ke == pytest.approx(gaussian_kinetic_expectation(0.6, k0, eps), abs=1e-8)
