import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boalab.discretization import Grid, gaussian_values, inner, norm
from boalab.errors import GapViolation, GridMismatch, OrderError, SingularNode, SupportError
from boalab.model_zoo import conical_model, constant_model, free_model, harmonic_model, make_avoided_crossing_1d
from boalab.oracles import dense_effective, free_gaussian, harmonic_coherent
from boalab.propagators import (
    EffectiveHamiltonian,
    adi_dia_pair,
    build_effective,
    cosine_ramp,
    intertwine,
    intertwiners,
    krylov_step,
    propagate_effective,
    propagate_full,
    worker_count,
)

G1 = Grid.uniform(1, 12.0, 1024)


def spinor(psi, m=2):
    out = np.zeros(psi.shape + (m,), dtype=complex)
    out[..., 0] = psi
    return out


def test_free_gaussian_full():
    eps = 0.1
    psi0 = free_gaussian(G1, -1.0, 0.5, 1.0, eps, 0.0)
    res = propagate_full(free_model(), G1, eps, spinor(psi0), 1.0)
    assert norm(G1, res.final[..., 0] - free_gaussian(G1, -1.0, 0.5, 1.0, eps, 1.0)) < 1e-8
    assert res.norm_drift < 1e-8 and res.energy_drift < 1e-6


def test_free_gaussian_krylov():
    eps = 0.1
    heff = build_effective(constant_model(), G1, 0, 0, eps)
    psi0 = free_gaussian(G1, -1.0, 0.5, 1.0, eps, 0.0)[..., None]
    res = propagate_effective(heff, psi0, 1.0, tol=1e-12)
    # constant potential -1 only contributes a global phase exp(i t / eps)
    exact = free_gaussian(G1, -1.0, 0.5, 1.0, eps, 1.0) * np.exp(1j / eps)
    assert norm(G1, res.final[..., 0] - exact) < 1e-8


def test_harmonic_coherent_state():
    eps = 0.1
    psi0, _ = harmonic_coherent(G1, 1.0, eps, 0.0)
    res = propagate_full(harmonic_model(), G1, eps, spinor(psi0), 1.0)
    exact, xc = harmonic_coherent(G1, 1.0, eps, 1.0)
    phase = np.vdot(exact, res.final[..., 0])
    assert norm(G1, res.final[..., 0] - exact * phase / abs(phase)) < 1e-4
    x = G1.points()[..., 0]
    centre = np.sum(x * np.abs(res.final[..., 0]) ** 2) * G1.cell_volume
    assert centre == pytest.approx(xc, abs=1e-6)
    assert res.norm_drift < 1e-8 and res.energy_drift < 1e-6


def test_zero_time_is_identity():
    g = Grid.uniform(1, 12.0, 256)
    psi = spinor(gaussian_values(g, 0.0, 0.6, 0.3, 0.1))
    res = propagate_full(make_avoided_crossing_1d(0.5), g, 0.1, psi, 0.0)
    assert np.array_equal(res.final, psi)
    heff = build_effective(make_avoided_crossing_1d(0.5), g, 0, 0, 0.1)
    res = propagate_effective(heff, psi[..., :1], 0.0)
    assert np.array_equal(res.final, psi[..., :1])


def test_full_propagation_rejects_bad_shape():
    with pytest.raises(GridMismatch):
        propagate_full(free_model(), G1, 0.1, np.zeros((512, 2)), 1.0)


def test_strang_order_two():
    """Fixed-step Strang error falls by about 4 when dt is halved."""
    from boalab.propagators import StrangPropagator

    g = Grid.uniform(1, 12.0, 512)
    m = make_avoided_crossing_1d(0.5)
    eps = 0.2
    psi = spinor(gaussian_values(g, -1.0, 0.6, 0.5, eps))
    prop = StrangPropagator(m, g, eps)
    ref = propagate_full(m, g, eps, psi, 0.5, tol=1e-12).final

    def run(n):
        y = psi[..., None]
        for _ in range(n):
            y = prop.step(y, 0.5 / n)
        return norm(g, y[..., 0] - ref)

    e1, e2 = run(40), run(80)
    assert 3.5 < e1 / e2 < 4.5


def test_eps_zero_orders_agree():
    g = Grid.uniform(1, 8.0, 128)
    m = make_avoided_crossing_1d(0.5)
    h0 = build_effective(m, g, 0, 0, 0.0)
    h1 = build_effective(m, g, 0, 1, 0.0)
    v = np.random.default_rng(3).normal(size=(128, 1)) + 0j
    assert np.max(np.abs(h0(v) - h1(v))) == 0


def test_constant_model_orders_coincide():
    g = Grid.uniform(1, 8.0, 128)
    m = constant_model()
    v = gaussian_values(g, 0.0, 0.7, 0.4, 0.1)[..., None]
    outs = [build_effective(m, g, 0, k, 0.1)(v) for k in (0, 1, 2)]
    assert np.max(np.abs(outs[0] - outs[1])) < 1e-14
    assert np.max(np.abs(outs[0] - outs[2])) < 1e-14


def test_order_errors():
    g = Grid.uniform(1, 8.0, 64)
    with pytest.raises(OrderError):
        build_effective(constant_model((-1.0, 0.0, 1.0)), g, (0, 1), 2, 0.1)
    with pytest.raises(OrderError):
        build_effective(constant_model(), g, 0, 3, 0.1)


def test_degenerate_band_raises_gap_violation():
    with pytest.raises(GapViolation):
        build_effective(free_model(), G1, 0, 0, 0.1)


def test_pure_gauge_connection_leaves_density_unchanged():
    """A = grad f is removed by psi -> exp(i f / ... ) and so cannot move |psi|^2."""
    g = Grid.uniform(1, 8.0, 256)
    eps = 0.1
    x = g.points()[..., 0]
    f = 0.3 * np.sin(np.pi * x / 8.0)
    a = (0.3 * np.pi / 8.0 * np.cos(np.pi * x / 8.0))[..., None]
    pot = 0.5 * x**2 / 16
    plain = EffectiveHamiltonian(g, eps, 1, (0,), pot)
    gauged = EffectiveHamiltonian(g, eps, 1, (0,), pot, connection=a)
    psi = gaussian_values(g, -1.0, 0.5, 0.5, eps)[..., None]
    # with p - eps A, the gauge factor is exp(i f)
    r1 = propagate_effective(plain, psi, 1.0, tol=1e-12).final
    r2 = propagate_effective(gauged, psi * np.exp(1j * f)[..., None], 1.0, tol=1e-12).final
    assert np.max(np.abs(np.abs(r1) ** 2 - np.abs(r2) ** 2)) < 1e-8


@pytest.mark.filterwarnings("ignore::boalab.errors.GaugeSeamWarning")
def test_support_error_near_crossing():
    g = Grid.uniform(2, 2.0, 32, offset=True)
    heff = build_effective(conical_model(), g, 1, 1, 0.1)
    psi = gaussian_values(g, [0.0, 0.0], 0.3, [0.0, 0.0], 0.1)[..., None]
    with pytest.raises(SupportError):
        propagate_effective(heff, psi, 0.1)


def test_intertwiner_roundtrip_order0():
    g = Grid.uniform(1, 8.0, 128)
    heff = build_effective(make_avoided_crossing_1d(0.5), g, 0, 0, 0.1)
    pair = intertwiners(heff)
    psi = gaussian_values(g, 0.0, 0.5, 0.3, 0.1)[..., None]
    up = intertwine(pair, "up", psi)
    assert up.shape == (128, 2)
    assert norm(g, intertwine(pair, "down", up) - psi) < 1e-12
    with pytest.raises(ValueError):
        intertwine(pair, "sideways", psi)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), order=st.sampled_from([0, 1, 2]), quant=st.sampled_from(["symmetric", "pmp"]))
def test_effective_hamiltonian_self_adjoint(seed, order, quant):
    g = Grid.uniform(1, 4.0, 32)
    heff = build_effective(make_avoided_crossing_1d(0.5), g, 0, order, 0.15, quantization=quant)
    rng = np.random.default_rng(seed)
    u, v = (rng.normal(size=(32, 1)) + 1j * rng.normal(size=(32, 1)) for _ in range(2))
    assert abs(inner(g, u, heff(v)) - inner(g, heff(u), v)) < 1e-10
    dense = dense_effective(heff)
    assert np.max(np.abs(dense - dense.conj().T)) < 1e-10


def test_krylov_step_matches_expm():
    from scipy.linalg import expm

    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 40)) + 1j * rng.normal(size=(40, 40))
    h = a + a.conj().T
    v = rng.normal(size=40) + 0j
    out, used = krylov_step(lambda y: h @ y, v, 0.05, m=20, tol=1e-12)
    assert np.linalg.norm(out - expm(-1j * used * h) @ v) < 1e-10


def test_cosine_ramp_limits():
    r = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    w = cosine_ramp(r, 1.0)
    assert w[0] == 0 and w[2] == 0 and w[-1] == 1 and w[-2] == 1
    assert w[3] == pytest.approx(0.5)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("BOA_LAB_THREADS", "3")
    assert worker_count() == 3


def test_adi_dia_pair_residuals():
    eps = 0.05
    g = Grid.uniform(2, 4.0, 128, offset=True)
    pair = adi_dia_pair(1.0, eps, g)
    psi = gaussian_values(g, [2.5, 0.0], 0.25, [0.3, -0.2], eps)
    v = psi[..., None] * np.array([0.6, 0.8j])
    assert pair.residual(v) < 1e-4
    assert pair.residual(v, (1.0, 0.5)) > 10 * pair.residual(v)
    with pytest.raises(SingularNode):
        adi_dia_pair(1.0, eps, Grid.uniform(2, 4.0, 64))


def test_pmp_mass_term_annihilates_radial_states():
    g = Grid.uniform(2, 5.0, 128, offset=True)
    r = np.linalg.norm(g.points(), axis=-1)
    ring = (np.exp(-((r - 2.0) ** 2) / 0.25) * -np.expm1(-(r**4)))[..., None]
    ratios = {}
    for q in ("pmp", "symmetric"):
        acts = build_effective(conical_model(), g, 1, 2, 0.05, gauge="analytic", quantization=q).term_actions(ring)
        ratios[q] = norm(g, acts["mass"]) / norm(g, acts["born_huang"])
    assert ratios["pmp"] < 1e-6
    assert ratios["symmetric"] > 1e-4
