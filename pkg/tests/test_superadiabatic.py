import numpy as np
import pytest

from boalab.adiabatic_geometry import eigendecompose_smooth
from boalab.discretization import Grid, MolecularState, inner, norm
from boalab.ensembles import EnsembleSpec
from boalab.errors import EnsembleError, GridMismatch
from boalab.model_zoo import BandSelector, conical_model, constant_model, make_avoided_crossing_1d
from boalab.oracles import b_norm_avoided_crossing, b_norm_conical, dense_intertwiner, dense_p1
from boalab.superadiabatic import (
    DefectMeasurement,
    apply_p1,
    apply_p1_array,
    build_b_field,
    build_u_first_order,
    projector_defect,
    unitarity_defect,
)

EPS = [0.2, 0.1, 0.05, 0.025]


def rand(shape, rng):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture(scope="module")
def small():
    g = Grid.uniform(1, 4.0, 32)
    m = make_avoided_crossing_1d(0.5)
    b = build_b_field(m, g, 0)
    _, f = eigendecompose_smooth(m, g, BandSelector((0,)))
    return g, m, b, f


def test_block_structure(small):
    g, m, b, _ = small
    p0 = b.meta["p0"][:, None]
    q0 = np.eye(2) - p0
    assert np.max(np.abs(p0 @ b.samples @ p0)) < 1e-9
    assert np.max(np.abs(q0 @ b.samples @ q0)) < 1e-9


def test_b_norm_examples():
    g = Grid.uniform(1, 4.0, 4096)
    b = build_b_field(make_avoided_crossing_1d(0.5), g, 0)
    i0 = int(np.argmin(np.abs(g.points()[..., 0])))
    assert g.points()[i0, 0] == 0.0
    assert np.linalg.norm(b.samples[i0]) == pytest.approx(b_norm_avoided_crossing(0.5, 0.0), abs=1e-8)
    assert b_norm_avoided_crossing(0.5, 0.0) == pytest.approx(1.0)

    gc = Grid.uniform(2, 2.0, 128)
    bc = build_b_field(conical_model(), gc, 1)
    idx = tuple(np.argmin(np.linalg.norm(gc.points() - [1.0, 0.0], axis=-1).ravel()).__index__() for _ in [0])
    flat = np.unravel_index(idx[0], gc.shape)
    assert np.allclose(gc.points()[flat], [1.0, 0.0])
    assert np.linalg.norm(bc.samples[flat]) == pytest.approx(b_norm_conical([1.0, 0.0]), rel=1e-5)
    assert b_norm_conical([1.0, 0.0]) == 0.25


def test_constant_frame_gives_zero_b():
    g = Grid.uniform(1, 4.0, 32)
    b = build_b_field(constant_model(), g, 0)
    assert np.max(np.abs(b.samples)) == 0


def test_p1_matches_dense_oracle(small, rng):
    g, _, b, _ = small
    eps = 0.1
    dense = dense_p1(b.samples, g, eps)
    for _ in range(20):
        v = rand((32, 2), rng)
        assert np.max(np.abs(apply_p1_array(b, eps, v).ravel() - dense @ v.ravel())) < 1e-10


def test_p1_self_adjoint_and_linear(small, rng):
    g, _, b, _ = small
    eps = 0.1
    for _ in range(5):
        x, y, z = (rand((32, 2), rng) for _ in range(3))
        assert abs(inner(g, x, apply_p1_array(b, eps, y)) - inner(g, apply_p1_array(b, eps, x), y)) < 1e-9
        al, be = 0.3 - 1j, 2.0 + 0.5j
        lhs = apply_p1_array(b, eps, al * y + be * z)
        rhs = al * apply_p1_array(b, eps, y) + be * apply_p1_array(b, eps, z)
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_p1_zero_b_and_kernel_spinor(small):
    g, m, b, _ = small
    zero = b.with_samples(np.zeros_like(b.samples))
    psi = MolecularState(g, np.ones((32, 2), dtype=complex), 0.1)
    assert np.max(np.abs(apply_p1(zero, 0.1, psi).values)) == 0
    chi = b.meta["p0"][..., 0]  # a vector in Ran P0 at every node is killed by B
    chi = chi / np.linalg.norm(chi, axis=-1, keepdims=True)
    out = apply_p1_array(b, 0.1, chi)
    dense = dense_p1(b.samples, g, 0.1)
    assert np.max(np.abs(out.ravel() - dense @ chi.ravel())) < 1e-10
    with pytest.raises(GridMismatch):
        apply_p1(b, 0.1, MolecularState(Grid.uniform(1, 4.0, 64), np.ones((64, 2)), 0.1))


def test_intertwiner_matches_dense(small, rng):
    g, _, b, f = small
    eps = 0.07
    u, us = build_u_first_order(f, b, eps)
    du, dus = dense_intertwiner(f.samples, b.samples, g, eps)
    for _ in range(20):
        mol, nuc = rand((32, 2), rng), rand((32, 1), rng)
        assert np.max(np.abs(u(mol).ravel() - du @ mol.ravel())) < 1e-10
        assert np.max(np.abs(us(nuc).ravel() - dus @ nuc.ravel())) < 1e-10


def test_u0_unitary_at_eps_zero(small, rng):
    g, _, b, f = small
    u, us = build_u_first_order(f, b, 0.0)
    psi = rand((32, 1), rng)
    assert norm(g, u(us(psi)) - psi) < 1e-10


def test_constant_frame_defects_vanish():
    g = Grid.uniform(1, 12.0, 256)
    m = constant_model()
    ens = EnsembleSpec(n_states=4)
    idem, comm = projector_defect(m, g, 0, EPS, ens)
    assert max(idem.defects) < 1e-12 and max(comm.defects) < 1e-12
    unit = unitarity_defect(m, g, 0, EPS, ens)
    assert max(unit.defects) < 1e-12


def test_p0_commutator_is_first_order():
    g = Grid.uniform(1, 12.0, 1024)
    m = make_avoided_crossing_1d(0.5)
    ens = EnsembleSpec(n_states=8)
    _, comm = projector_defect(m, g, 0, EPS, ens, with_p1=False)
    assert 0.8 <= comm.slope <= 1.3


def test_defect_measurement_invariants():
    d = DefectMeasurement("x", [0.1, 0.2, 0.05, 0.025], [1e-2, 4e-2, 2.5e-3, 6.25e-4], {})
    assert d.eps == sorted(d.eps)
    assert d.slope == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        DefectMeasurement("x", [0.1], [-1.0], {})


def test_ensemble_kinetic_bound_enforced():
    g = Grid.uniform(1, 12.0, 1024)
    with pytest.raises(EnsembleError):
        EnsembleSpec(n_states=4, kinetic_bound=0.05).generate(g, 0.1, 2)
    states = EnsembleSpec(n_states=4).generate(g, 0.1, 2)
    assert all(abs(norm(g, s) - 1) < 1e-12 for s in states)
    again = EnsembleSpec(n_states=4).generate(g, 0.1, 2)
    assert all(np.array_equal(a, b) for a, b in zip(states, again))
