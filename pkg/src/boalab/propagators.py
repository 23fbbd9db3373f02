"""Time evolution under the full molecular and the effective nuclear Hamiltonians.

Both equations are written as i eps d/dt psi = H psi, so every propagator
advances by exp(-i H dt / eps).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .adiabatic_geometry import (
    DEFAULT_R_MIN_CELLS,
    DEFAULT_SCHEME,
    FiberField,
    azimuthal_unit,
    berry_connection,
    born_huang,
    eigendecompose_smooth,
    mass_tensor,
    multiband_matrices,
)
from .discretization import (
    Grid,
    fourier_multiply,
    kinetic_array,
    momentum_array,
    momentum_pair_array,
)
from .errors import AccuracyError, GridMismatch, OrderError, SingularNode, SupportError
from .model_zoo import DEFAULT_GAP_THRESHOLD, BandSelector, ElectronicModel, conical_eigenvectors, conical_model
from .superadiabatic import OperatorStencil, build_b_field, build_u_first_order, nodewise

QUANTIZATIONS = ("symmetric", "pmp")
SUPPORT_LIMIT = 1e-6
START_SUPPORT_LIMIT = 1e-8


def worker_count() -> int:
    """Worker cap from BOA_LAB_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("BOA_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _vol_norm(grid: Grid, values: np.ndarray, axis=None) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(values) ** 2, axis=axis) * grid.cell_volume)


@dataclass
class PropagationResult:
    final: np.ndarray
    times: list
    norms: list
    energies: list
    steps: list = field(default_factory=list)
    rejected: int = 0

    @property
    def norm_drift(self) -> float:
        n = np.asarray(self.norms)
        return float(np.max(np.abs(n - n[0]))) if n.size else 0.0

    @property
    def energy_drift(self) -> float:
        e = np.asarray(self.energies)
        return float(np.max(np.abs(e - e[0]))) if e.size else 0.0

    def summary(self) -> dict:
        return {
            "n_steps": len(self.steps),
            "rejected": self.rejected,
            "norm_drift": self.norm_drift,
            "energy_drift": self.energy_drift,
            "min_dt": float(min(self.steps)) if self.steps else 0.0,
            "max_dt": float(max(self.steps)) if self.steps else 0.0,
        }


# --------------------------------------------------------------------------
# full dynamics

class StrangPropagator:
    """exp(-i V dt/2eps) exp(-i T dt/eps) exp(-i V dt/2eps) on batches (*g, m, n)."""

    def __init__(self, model: ElectronicModel, grid: Grid, eps: float):
        self.grid, self.eps = grid, eps
        self.h_nodes = model.evaluate(grid.points())
        self.levels, self.vectors = np.linalg.eigh(self.h_nodes)
        self.kinetic = 0.5 * grid.k_squared()
        self._cache = {}

    def _factors(self, dt):
        key = float(dt)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            phase = np.exp(-0.5j * self.levels * dt / self.eps)
            half = np.einsum("...ai,...i,...bi->...ab", self.vectors, phase, self.vectors.conj())
            kin = np.exp(-1j * self.eps * self.kinetic * dt)
            self._cache[key] = (half, kin)
        return self._cache[key]

    def step(self, y: np.ndarray, dt: float) -> np.ndarray:
        half, kin = self._factors(dt)
        y = np.matmul(half, y)
        y = fourier_multiply(self.grid, y, kin)
        return np.matmul(half, y)

    def energy(self, y: np.ndarray) -> np.ndarray:
        hy = kinetic_array(self.grid, self.eps, y) + np.einsum("...ab,...bn->...an", self.h_nodes, y)
        axes = tuple(range(self.grid.d + 1))
        return np.real(np.sum(np.conj(y) * hy, axis=axes)) * self.grid.cell_volume


def _as_batch(psi0) -> tuple[np.ndarray, bool]:
    if isinstance(psi0, (list, tuple)):
        return np.stack([np.asarray(p, dtype=complex) for p in psi0], axis=-1), True
    return np.asarray(psi0, dtype=complex)[..., None], False


def _unbatch(y: np.ndarray, batched: bool):
    if batched:
        return [y[..., i] for i in range(y.shape[-1])]
    return y[..., 0]


def propagate_full(
    model: ElectronicModel,
    grid: Grid,
    eps: float,
    psi0,
    T: float,
    tol: float = 1e-9,
    safety: float = 1.0,
    n_samples: int = 8,
    max_steps: int = 2_000_000,
) -> PropagationResult:
    """Strang splitting with step-doubling control of the local error.

    ``psi0`` is an array (*nodes, m) or a list of such arrays; a list is
    propagated as one batch with a common step sequence. Each step compares
    one step of size dt with two of size dt/2; the finer result is kept when
    the estimated local error (difference / 3) is at most ``tol``.
    """
    y, batched = _as_batch(psi0)
    if y.shape[:-1] != grid.shape + (model.dim_electronic,):
        raise GridMismatch(f"state shape {y.shape[:-1]} does not match grid/model {grid.shape + (model.dim_electronic,)}")
    prop = StrangPropagator(model, grid, eps)
    norm_axes = tuple(range(grid.d + 1))
    sample_times = list(np.linspace(0.0, T, n_samples + 1)[1:]) if T > 0 else []
    times, norms, energies = [0.0], [_vol_norm(grid, y, norm_axes)], [prop.energy(y)]
    steps, rejected = [], 0
    t = 0.0
    dt = min(T, eps * float(np.min(grid.spacing)) ** 2 * safety) if T > 0 else 0.0
    dt_floor = 1e-14 * max(T, 1.0)
    while t < T - 1e-15 * max(T, 1.0):
        target = next(s for s in sample_times if s > t + 1e-15)
        h = min(dt, target - t)
        coarse = prop.step(y, h)
        fine = prop.step(prop.step(y, 0.5 * h), 0.5 * h)
        err = float(np.max(_vol_norm(grid, fine - coarse, norm_axes))) / 3.0
        if err <= tol:
            y = fine
            t = target if abs(target - (t + h)) < 1e-14 * max(T, 1.0) else t + h
            steps.append(h)
            if abs(t - target) < 1e-14 * max(T, 1.0):
                times.append(t)
                norms.append(_vol_norm(grid, y, norm_axes))
                energies.append(prop.energy(y))
            if len(steps) > max_steps:
                raise AccuracyError(f"exceeded {max_steps} steps at t={t}")
        else:
            rejected += 1
        factor = 0.9 * (tol / err) ** (1.0 / 3.0) if err > 0 else 2.0
        dt = h * min(2.0, max(0.2, factor))
        if dt < dt_floor:
            raise AccuracyError(f"step size underflow at t={t:.6g} (local error {err:.2e} > {tol:.1e})")
    norms_max = [float(np.max(np.abs(n - norms[0]))) for n in norms]
    energy_dev = [float(np.max(np.abs(e - energies[0]))) for e in energies]
    res = PropagationResult(
        final=_unbatch(y, batched),
        times=times,
        norms=[1.0 + v for v in norms_max] if batched else [float(n[0]) for n in norms],
        energies=energy_dev if batched else [float(e[0]) for e in energies],
        steps=steps,
        rejected=rejected,
    )
    return res


# --------------------------------------------------------------------------
# effective Hamiltonians

def cosine_ramp(r: np.ndarray, r_min: float) -> np.ndarray:
    """0 for r < r_min, 1 for r >= 2 r_min, (1 - cos(pi (r - r_min)/r_min))/2 between."""
    s = np.clip((r - r_min) / r_min, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * s))


def regularization_mask(model: ElectronicModel, grid: Grid, r_min_cells: float = DEFAULT_R_MIN_CELLS) -> np.ndarray:
    mask = np.ones(grid.shape)
    if not model.crossing_points:
        return mask
    r_min = r_min_cells * float(np.max(grid.spacing))
    pts = grid.points()
    for c in model.crossing_points:
        mask *= cosine_ramp(np.linalg.norm(pts - np.asarray(c), axis=-1), r_min)
    return mask


@dataclass
class EffectiveHamiltonian:
    """Matrix-free effective nuclear Hamiltonian on l-component grid arrays.

    One band: 1/2 p^2 + E - (eps/2)(p.A + A.p) + (eps^2/2) A^2 + (eps^2/2) phi - eps^2 M.
    Several bands (order 1): 1/2 p^2 + W - (eps/2)(p.A + A.p).
    Absent ingredients are None. ``quantization`` selects the ordering of M:
    ``symmetric`` is (m_lk p_l p_k + p_l p_k m_lk)/2 and ``pmp`` is p_l m_lk p_k.
    """

    grid: Grid
    eps: float
    order: int
    bands: tuple
    potential: np.ndarray
    connection: Optional[np.ndarray] = None
    born_huang: Optional[np.ndarray] = None
    mass: Optional[np.ndarray] = None
    quantization: str = "symmetric"
    mask: Optional[np.ndarray] = None
    excluded: Optional[np.ndarray] = None
    frame: Optional[FiberField] = None
    b_field: Optional[FiberField] = None
    gauge: str = "parallel_transport"

    def __post_init__(self):
        if self.quantization not in QUANTIZATIONS:
            raise ValueError(f"unknown quantization '{self.quantization}'")
        if self.excluded is None:
            self.excluded = np.zeros(self.grid.shape, dtype=bool)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    def _check(self, values):
        if values.shape != self.grid.shape + (self.n_bands,):
            raise GridMismatch(f"expected shape {self.grid.shape + (self.n_bands,)}, got {values.shape}")

    def term_actions(self, values: np.ndarray) -> dict:
        """Separate actions of the kinetic, potential, A, phi and M parts."""
        self._check(values)
        g, eps = self.grid, self.eps
        out = {"kinetic": kinetic_array(g, eps, values)}
        if self.potential.ndim == g.d:
            out["potential"] = self.potential[..., None] * values
        else:
            out["potential"] = nodewise(self.potential, values)
        if self.connection is not None and eps != 0:
            a = self.connection
            acc = np.zeros(values.shape, dtype=complex)
            sq = np.zeros(values.shape, dtype=complex)
            for k in range(g.d):
                if a.ndim == g.d + 1:
                    ak_psi = a[..., k, None] * values
                    p_psi = momentum_array(g, eps, values, k)
                    acc += momentum_array(g, eps, ak_psi, k) + a[..., k, None] * p_psi
                    sq += a[..., k, None] * ak_psi
                else:
                    ak = a[..., k, :, :]
                    acc += momentum_array(g, eps, nodewise(ak, values), k) + nodewise(ak, momentum_array(g, eps, values, k))
            out["connection"] = -0.5 * eps * acc
            if self.n_bands == 1 and a.ndim == g.d + 1:
                out["connection"] = out["connection"] + 0.5 * eps**2 * sq
        if self.born_huang is not None:
            out["born_huang"] = 0.5 * eps**2 * self.born_huang[..., None] * values
        if self.mass is not None:
            out["mass"] = -(eps**2) * self._mass_action(values)
        return out

    def _mass_action(self, values: np.ndarray) -> np.ndarray:
        g, eps = self.grid, self.eps
        m = self.mass
        acc = np.zeros(values.shape, dtype=complex)
        for l in range(g.d):
            for k in range(g.d):
                mlk = m[..., l, k, None]
                if not np.any(mlk):
                    continue
                if self.quantization == "symmetric":
                    acc += 0.5 * (mlk * momentum_pair_array(g, eps, values, l, k) + momentum_pair_array(g, eps, mlk * values, l, k))
                else:
                    acc += momentum_array(g, eps, mlk * momentum_array(g, eps, values, k), l)
        return acc

    def apply(self, values: np.ndarray) -> np.ndarray:
        return sum(self.term_actions(values).values())

    __call__ = apply

    def expectation(self, values: np.ndarray) -> float:
        return float(np.real(np.vdot(values, self.apply(values))) * self.grid.cell_volume)


def build_effective(
    model: ElectronicModel,
    grid: Grid,
    bands,
    order: int,
    eps: float,
    gauge: str = "parallel_transport",
    quantization: str = "symmetric",
    derivative_scheme: str = DEFAULT_SCHEME,
    r_min_cells: float = DEFAULT_R_MIN_CELLS,
    terms: Optional[Sequence[str]] = None,
    threshold: float = DEFAULT_GAP_THRESHOLD,
) -> EffectiveHamiltonian:
    """Assemble the order-0/1/2 effective Hamiltonian of the selected bands.

    ``terms`` restricts the geometric ingredients actually included (subset
    of {"A", "phi", "mass"}); by default order 1 includes A and order 2 all
    three. Near crossing points A, phi and the mass tensor are multiplied by
    a cosine ramp vanishing inside r_min.
    """
    selector = bands if isinstance(bands, BandSelector) else BandSelector(tuple(np.atleast_1d(bands)))
    if order not in (0, 1, 2):
        raise OrderError(f"order must be 0, 1 or 2, got {order}")
    if order == 2 and len(selector) > 1:
        raise OrderError("second-order effective Hamiltonians are implemented for a single band only")
    defaults = {0: (), 1: ("A",), 2: ("A", "phi", "mass")}[order]
    terms = tuple(defaults if terms is None else terms)
    energies, frame = eigendecompose_smooth(model, grid, selector, gauge, threshold, r_min_cells)
    mask = regularization_mask(model, grid, r_min_cells)
    excluded = frame.excluded
    single = len(selector) == 1
    if single:
        potential = energies.samples[..., 0]
    else:
        w, _ = multiband_matrices(model, frame, derivative_scheme)
        potential = w.samples
    heff = EffectiveHamiltonian(grid, eps, order, selector.indices, potential, quantization=quantization,
                                mask=mask, excluded=excluded, frame=frame, gauge=gauge)
    if "A" in terms:
        a = berry_connection(frame, derivative_scheme).samples
        a = a * mask.reshape(mask.shape + (1,) * (a.ndim - grid.d))
        heff.connection = a
    if "phi" in terms:
        heff.born_huang = born_huang(frame, "eigenvector_form", derivative_scheme).samples * mask
    if "mass" in terms:
        m = mass_tensor(model, frame, derivative_scheme=derivative_scheme, threshold=threshold).samples
        heff.mass = m * mask[..., None, None]
    if order == 2 and single:
        heff.b_field = build_b_field(model, grid, selector.indices[0], derivative_scheme, threshold, r_min_cells)
    return heff


# --------------------------------------------------------------------------
# Krylov propagation

def _lanczos(apply, v: np.ndarray, m: int):
    """Lanczos with full reorthogonalisation; returns basis, alpha, beta (len m), beta_next."""
    n = v.size
    beta0 = np.linalg.norm(v)
    basis = np.zeros((m + 1, n), dtype=complex)
    basis[0] = v.ravel() / beta0
    alpha = np.zeros(m)
    beta = np.zeros(m)
    shape = v.shape
    for j in range(m):
        w = apply(basis[j].reshape(shape)).ravel()
        alpha[j] = np.real(np.vdot(basis[j], w))
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if b < 1e-13 * max(1.0, abs(alpha[j])):
            return basis[: j + 1], alpha[: j + 1], beta[:j], 0.0, beta0
        basis[j + 1] = w / b
    return basis[:m], alpha, beta[: m - 1], beta[m - 1], beta0


def krylov_step(apply, v: np.ndarray, tau: float, m: int = 30, tol: float = 1e-11):
    """exp(-i tau H) v with the largest admissible tau' <= tau.

    Returns (result, tau_used). The a posteriori estimate
    beta_m |e_m^T exp(-i tau T_m) e_1| bounds the error of each attempt.
    """
    basis, alpha, beta, beta_next, beta0 = _lanczos(apply, v, m)
    if len(alpha) == 1:
        lam, q = alpha.copy(), np.ones((1, 1))
    else:
        lam, q = eigh_tridiagonal(alpha, beta)
    while True:
        coeff = q @ (np.exp(-1j * tau * lam) * q[0].conj())
        err = beta0 * beta_next * abs(coeff[-1])
        if err <= tol or beta_next == 0.0:
            out = (basis.T @ coeff) * beta0
            return out.reshape(v.shape), tau
        tau *= 0.5
        if tau < 1e-14:
            raise AccuracyError("Krylov step size underflow")


def propagate_effective(
    heff: EffectiveHamiltonian,
    psi0,
    T: float,
    tol: float = 1e-10,
    krylov_dim: int = 30,
    n_samples: int = 8,
) -> PropagationResult:
    """Short-iterative Lanczos propagation of i eps d/dt psi = Heff psi.

    ``psi0`` is one array (*nodes, l) or a list of them, propagated one by
    one. Raises SupportError if more than 1e-8 of the initial mass (1e-6 at
    later sample times) sits on excluded nodes.
    """
    states, batched = (list(psi0), True) if isinstance(psi0, (list, tuple)) else ([psi0], False)
    g = heff.grid
    excl = heff.excluded
    finals, all_norms, all_energies, steps = [], [], [], []
    times = [0.0] + (list(np.linspace(0.0, T, n_samples + 1)[1:]) if T > 0 else [])
    for psi in states:
        y = np.asarray(psi, dtype=complex)
        heff._check(y)
        total = np.sum(np.abs(y) ** 2)
        if excl.any() and np.sum(np.abs(y[excl]) ** 2) > START_SUPPORT_LIMIT * total:
            raise SupportError("initial state overlaps the excluded region")
        norms, energies = [_vol_norm(g, y)], [heff.expectation(y)]
        t, dt = 0.0, T / n_samples if T > 0 else 0.0
        for target in times[1:]:
            while t < target - 1e-15 * max(T, 1.0):
                h = min(dt, target - t)
                step_tol = max(tol * h / T, 1e-13)
                y, used = krylov_step(heff.apply, y, h / heff.eps, krylov_dim, step_tol)
                used *= heff.eps
                steps.append(used)
                t = target if used == h and h == target - t else t + used
                dt = used * 1.5 if used == h else used
            norms.append(_vol_norm(g, y))
            energies.append(heff.expectation(y))
            if excl.any() and np.sum(np.abs(y[excl]) ** 2) > SUPPORT_LIMIT * total:
                raise SupportError(f"wavefunction mass entered the excluded region by t={t:.4g}")
        finals.append(y)
        all_norms.append(norms)
        all_energies.append(energies)
    norms = np.asarray(all_norms)
    energies = np.asarray(all_energies)
    if batched:
        nrm = list(1.0 + np.max(np.abs(norms - norms[:, :1]), axis=0))
        en = list(np.max(np.abs(energies - energies[:, :1]), axis=0))
    else:
        nrm, en = list(norms[0]), list(energies[0])
    return PropagationResult(finals if batched else finals[0], times, nrm, en, steps)


# --------------------------------------------------------------------------
# intertwining

def intertwiners(heff: EffectiveHamiltonian) -> tuple[OperatorStencil, OperatorStencil]:
    """(U, U^*) matching the order of ``heff``: U0 for orders 0/1, U_(1) for order 2."""
    if heff.frame is None:
        raise ValueError("effective Hamiltonian carries no frame")
    b = heff.b_field
    if heff.order < 2 or b is None:
        zero = FiberField(heff.grid, "b_field", np.zeros(heff.grid.shape + (heff.grid.d,) + (heff.frame.samples.shape[-2],) * 2, dtype=complex))
        return build_u_first_order(heff.frame, zero, 0.0)
    return build_u_first_order(heff.frame, b, heff.eps)


def intertwine(u_pair, direction: str, values: np.ndarray) -> np.ndarray:
    """``up``: nucleonic -> molecular via U^*; ``down``: molecular -> nucleonic via U."""
    u, u_star = u_pair
    if direction == "up":
        return u_star(values)
    if direction == "down":
        return u(values)
    raise ValueError(f"direction must be 'up' or 'down', got '{direction}'")


# --------------------------------------------------------------------------
# adiabatic/diabatic pair for the conical model

K_MATRIX = np.array([[1.0, 1j], [-1j, 1.0]])


@dataclass
class AdiDiaPair:
    """Diabatic and adiabatic conical Hamiltonians with the nodewise basis change.

    The adiabatic basis is (xi_+, xi_-). ``to_adiabatic`` applies Phi^dagger,
    ``to_diabatic`` applies Phi.
    """

    grid: Grid
    eps: float
    C: float
    frame: np.ndarray
    h_nodes: np.ndarray
    radius: np.ndarray
    e_phi: np.ndarray
    coupling_scale: tuple = (0.5, 0.25)

    def h_dia(self, values):
        return kinetic_array(self.grid, self.eps, values) + nodewise(self.h_nodes, values)

    def to_adiabatic(self, values):
        return nodewise(np.conj(np.swapaxes(self.frame, -1, -2)), values)

    def to_diabatic(self, values):
        return nodewise(self.frame, values)

    def h_adi(self, values, scale: Optional[tuple] = None):
        """1/2 p^2 + diag(E+, E-) + c1 (eps/r) e_phi.p K + c2 (eps^2/r^2) K.

        ``scale`` = (c1, c2) defaults to (1/2, 1/4), which makes the pair
        unitarily equivalent.
        """
        c1, c2 = self.coupling_scale if scale is None else scale
        g, eps = self.grid, self.eps
        out = kinetic_array(g, eps, values)
        out[..., 0] += self.C * self.radius * values[..., 0]
        out[..., 1] -= self.C * self.radius * values[..., 1]
        ep = np.zeros(values.shape, dtype=complex)
        for k in range(g.d):
            ep += (self.e_phi[..., k] / self.radius)[..., None] * momentum_array(g, eps, values, k)
        out += c1 * eps * nodewise(K_MATRIX, ep)
        out += c2 * eps**2 * nodewise(K_MATRIX, values / self.radius[..., None] ** 2)
        return out

    def residual(self, values, scale: Optional[tuple] = None) -> float:
        """||(Phi^dagger H_dia Phi - H_adi) psi|| for an adiabatic-basis state psi."""
        diff = self.to_adiabatic(self.h_dia(self.to_diabatic(values))) - self.h_adi(values, scale)
        return float(_vol_norm(self.grid, diff))


def adi_dia_pair(C: float, eps: float, grid: Grid) -> AdiDiaPair:
    """Build the conical pair; the grid must not contain the crossing point."""
    model = conical_model(C)
    pts = grid.points()
    r = np.hypot(pts[..., 0], pts[..., 1])
    if np.any(r == 0):
        raise SingularNode("grid contains the crossing point; use a half-cell offset grid")
    xi_p, xi_m = conical_eigenvectors(pts)
    frame = np.stack([xi_p, xi_m], axis=-1)
    return AdiDiaPair(grid, eps, C, frame, model.evaluate(pts), r, azimuthal_unit(pts))
