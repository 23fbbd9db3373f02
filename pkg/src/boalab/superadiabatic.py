"""First-order superadiabatic projector and intertwiner, and their defects.

For an isolated band j with projector P0 and reduced resolvent R,

    B_k = -i P0 (d_k P0) R,      P1 = sum_k p_k B_k + B_k^* p_k,
    U0 Psi = <chi, Psi>,         U1 = U0 p.B.

Momentum is applied spectrally, fibre matrices nodewise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .adiabatic_geometry import (
    DEFAULT_R_MIN_CELLS,
    DEFAULT_SCHEME,
    FiberField,
    check_gap,
    crossing_exclusion,
    eigensystem,
    gradient,
    reduced_resolvent,
)
from .discretization import Grid, GridState, MolecularState, NucleonicState, kinetic_array, momentum_array, norm
from .ensembles import EnsembleSpec
from .errors import GridMismatch
from .fitting import fit_slope
from .model_zoo import DEFAULT_GAP_THRESHOLD, BandSelector, ElectronicModel


def _dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def nodewise(mat: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a field of matrices (*g, a, b) to values (*g, b)."""
    return np.einsum("...ab,...b->...a", mat, values)


@dataclass
class OperatorStencil:
    """A matrix-free operator on grid arrays with a readable recipe."""

    grid: Grid
    eps: float
    description: tuple
    apply_array: Callable[[np.ndarray], np.ndarray]
    in_components: int
    out_components: int

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape != self.grid.shape + (self.in_components,):
            raise GridMismatch(f"operator expects shape {self.grid.shape + (self.in_components,)}, got {values.shape}")
        return self.apply_array(values)

    def apply(self, state: GridState) -> GridState:
        if state.grid != self.grid:
            raise GridMismatch("state and operator live on different grids")
        out = self(state.values)
        cls = MolecularState if self.out_components == state.values.shape[-1] and isinstance(state, MolecularState) else None
        if cls is None:
            cls = NucleonicState if self.out_components < state.values.shape[-1] else MolecularState
        return cls(self.grid, out, self.eps)


# --------------------------------------------------------------------------
# B field and P1

def build_b_field(
    model: ElectronicModel,
    grid: Grid,
    band: int,
    derivative_scheme: str = DEFAULT_SCHEME,
    threshold: float = DEFAULT_GAP_THRESHOLD,
    r_min_cells: float = DEFAULT_R_MIN_CELLS,
) -> FiberField:
    """B_k(x) = -i P0 (d_k P0) R(x) per axis k, shape (*nodes, d, m, m).

    R already carries the factor (1 - P0), so B P0 = 0 and P0 B = B hold
    nodewise to rounding. B is set to zero on excluded nodes.
    """
    BandSelector((band,)).validate(model.dim_electronic)
    excluded = crossing_exclusion(model, grid, r_min_cells)
    energies, vectors = eigensystem(model, grid)
    check_gap(energies, BandSelector((band,)), ~excluded, threshold, grid)
    chi = vectors[..., :, band]
    p0 = chi[..., :, None] * chi[..., None, :].conj()
    dp0 = gradient(p0, grid, derivative_scheme)  # (*g, d, m, m)
    res = reduced_resolvent(energies, vectors, band)
    b = -1j * p0[..., None, :, :] @ dp0 @ res[..., None, :, :]
    b[excluded] = 0.0
    meta = {"p0": p0, "scheme": derivative_scheme}
    return FiberField(grid, "b_field", b, "invariant", excluded, (band,), meta)


def apply_b(b: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(*g, d, m, m) x (*g, m) -> (*g, d, m)."""
    return np.einsum("...kab,...b->...ka", b, values)


def apply_p1_array(b_field: FiberField, eps: float, values: np.ndarray) -> np.ndarray:
    grid = b_field.grid
    b = b_field.samples
    bdag = _dagger(b)
    bpsi = apply_b(b, values)
    out = np.zeros(values.shape, dtype=complex)
    for k in range(grid.d):
        out += momentum_array(grid, eps, bpsi[..., k, :], k)
        out += nodewise(bdag[..., k, :, :], momentum_array(grid, eps, values, k))
    return out


def apply_p1(b_field: FiberField, eps: float, psi: GridState) -> MolecularState:
    """(p.B + B^*.p) psi with p = -i eps grad applied spectrally."""
    if psi.grid != b_field.grid:
        raise GridMismatch("state and B field live on different grids")
    return MolecularState(psi.grid, apply_p1_array(b_field, eps, psi.values), eps)


def corrected_projector_array(b_field: FiberField, eps: float, values: np.ndarray, with_p1: bool = True) -> np.ndarray:
    """(P0 + eps P1) psi, or P0 psi alone when ``with_p1`` is false."""
    out = nodewise(b_field.meta["p0"], values)
    if with_p1 and eps != 0:
        out = out + eps * apply_p1_array(b_field, eps, values)
    return out


def full_hamiltonian_array(h_nodes: np.ndarray, grid: Grid, eps: float, values: np.ndarray) -> np.ndarray:
    """(-eps^2/2 Laplacian + H_e(x)) psi for precomputed nodal matrices H_e."""
    return kinetic_array(grid, eps, values) + nodewise(h_nodes, values)


# --------------------------------------------------------------------------
# intertwiner

def build_u_first_order(frame: FiberField, b_field: FiberField, eps: float) -> tuple[OperatorStencil, OperatorStencil]:
    """U_(1) = U0 + eps U0 p.B and its adjoint U_(1)^* = U0^* + eps B^*.p U0^*.

    ``frame`` provides chi (shape (*g, m, l)); the exact unitarising O(eps^2)
    correction is not included.
    """
    if frame.grid != b_field.grid:
        raise GridMismatch("frame and B field live on different grids")
    grid = frame.grid
    chi = frame.samples
    chi_dag = _dagger(chi)
    b = b_field.samples
    bdag = _dagger(b)
    m, ell = chi.shape[-2], chi.shape[-1]

    def forward(values):
        mol = values
        if eps != 0:
            bpsi = apply_b(b, values)
            for k in range(grid.d):
                mol = mol + eps * momentum_array(grid, eps, bpsi[..., k, :], k)
        return nodewise(chi_dag, mol)

    def backward(values):
        lifted = nodewise(chi, values)
        out = lifted.copy()
        if eps != 0:
            for k in range(grid.d):
                out += eps * nodewise(bdag[..., k, :, :], momentum_array(grid, eps, lifted, k))
        return out

    u = OperatorStencil(grid, eps, ("apply p.B nodewise/spectral", "scale eps", "add identity", "project onto chi"), forward, m, ell)
    u_star = OperatorStencil(grid, eps, ("lift by chi", "apply B^*.p", "scale eps", "add lift"), backward, ell, m)
    return u, u_star


# --------------------------------------------------------------------------
# defect measurements

@dataclass
class DefectMeasurement:
    """Ensemble-supremum defect norms over an increasing list of eps."""

    name: str
    eps: list
    defects: list
    ensemble: dict
    per_state: list = field(default_factory=list)
    slope: Optional[float] = None
    fit: Optional[dict] = None

    def __post_init__(self):
        order = np.argsort(self.eps)
        self.eps = [float(self.eps[i]) for i in order]
        self.defects = [float(self.defects[i]) for i in order]
        if self.per_state:
            self.per_state = [list(self.per_state[i]) for i in order]
        if any(d < 0 for d in self.defects):
            raise ValueError("defect norms must be nonnegative")
        if len(self.eps) >= 4 and all(d > 0 for d in self.defects):
            f = fit_slope(self.eps, self.defects)
            self.slope = f.slope
            self.fit = f.to_dict()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "eps": self.eps,
            "defects": self.defects,
            "ensemble": self.ensemble,
            "slope": self.slope,
            "fit": self.fit,
        }


def projector_defect(
    model: ElectronicModel,
    grid: Grid,
    band: int,
    eps_list: Sequence[float],
    ensemble: EnsembleSpec,
    with_p1: bool = True,
    derivative_scheme: str = DEFAULT_SCHEME,
) -> tuple[DefectMeasurement, DefectMeasurement]:
    """Idempotency ||(P^2 - P) psi|| and commutator ||[P, H^eps] psi|| suprema.

    P = P0 + eps P1 (or P0 alone with ``with_p1=False``). Test states are the
    ensemble packets dressed with random constant spinors.
    """
    b_field = build_b_field(model, grid, band, derivative_scheme)
    h_nodes = model.evaluate(grid.points())
    idem_all, comm_all = [], []
    for eps in eps_list:
        states = ensemble.generate(grid, eps, model.dim_electronic)
        idem, comm = [], []
        for psi in states:
            def proj(v):
                return corrected_projector_array(b_field, eps, v, with_p1)

            def ham(v):
                return full_hamiltonian_array(h_nodes, grid, eps, v)

            pp = proj(psi)
            idem.append(norm(grid, proj(pp) - pp))
            comm.append(norm(grid, proj(ham(psi)) - ham(pp)))
        idem_all.append(idem)
        comm_all.append(comm)
    ens = ensemble.to_dict()
    tag = "P0+epsP1" if with_p1 else "P0"
    return (
        DefectMeasurement(f"idempotency[{tag}]", list(eps_list), [max(v) for v in idem_all], ens, idem_all),
        DefectMeasurement(f"commutator[{tag}]", list(eps_list), [max(v) for v in comm_all], ens, comm_all),
    )


def unitarity_defect(
    model: ElectronicModel,
    grid: Grid,
    band: int,
    eps_list: Sequence[float],
    ensemble: EnsembleSpec,
    frame: Optional[FiberField] = None,
    derivative_scheme: str = DEFAULT_SCHEME,
) -> DefectMeasurement:
    """Round-trip defect sup ||U_(1) U_(1)^* psi - psi|| over nucleonic packets."""
    from .adiabatic_geometry import eigendecompose_smooth

    if frame is None:
        _, frame = eigendecompose_smooth(model, grid, BandSelector((band,)))
    b_field = build_b_field(model, grid, band, derivative_scheme)
    per = []
    for eps in eps_list:
        u, u_star = build_u_first_order(frame, b_field, eps)
        states = ensemble.generate(grid, eps, 1)
        per.append([norm(grid, u(u_star(psi)) - psi) for psi in states])
    return DefectMeasurement("unitarity", list(eps_list), [max(v) for v in per], ensemble.to_dict(), per)
