"""Eigenframes and the geometric quantities built from them.

Fields are sampled on the nodes of a :class:`~boalab.discretization.Grid`;
sample arrays have the grid axes first and the fibre axes last:

========== ===============================
kind       trailing shape of ``samples``
========== ===============================
bands      (l,)           energies of the selected bands
frame      (m, l)         orthonormal columns
projector  (m, m)
matrix     (l, l)
connection (d,) if l == 1 (real), else (d, l, l)
tensor     (d, d)
curvature  (d, d) if l == 1, else (d, d, l, l)
scalar     ()
========== ===============================

Derivatives of fibre fields use centred finite differences (one-sided at
the box edges) or, on request, spectral differentiation.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .discretization import Grid
from .errors import BasisError, GapViolation, GaugeSeamWarning, NonOrthogonal, SingularNode
from .model_zoo import DEFAULT_GAP_THRESHOLD, BandSelector, ElectronicModel

SCHEMES = ("centered_fd2", "centered_fd4", "spectral")
DEFAULT_SCHEME = "centered_fd4"
DEFAULT_R_MIN_CELLS = 2.0
GAUGES = ("parallel_transport", "analytic", "raw")


@dataclass
class FiberField:
    grid: Grid
    kind: str
    samples: np.ndarray
    gauge_id: str = "none"
    excluded: Optional[np.ndarray] = None
    bands: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.excluded is None:
            self.excluded = np.zeros(self.grid.shape, dtype=bool)
        if self.samples.shape[: self.grid.d] != self.grid.shape:
            raise ValueError(f"samples {self.samples.shape} do not match grid {self.grid.shape}")

    @property
    def fiber_shape(self) -> tuple:
        return self.samples.shape[self.grid.d:]

    @property
    def active(self) -> np.ndarray:
        return ~self.excluded

    def at(self, index) -> np.ndarray:
        """Sample at one node; raises SingularNode at excluded nodes."""
        index = tuple(np.atleast_1d(index))
        if self.excluded[index]:
            raise SingularNode(f"node {index} is excluded ({self.kind} is singular there)")
        return self.samples[index]

    def with_samples(self, samples, kind=None, **changes) -> "FiberField":
        return replace(self, samples=samples, kind=kind or self.kind, meta=dict(self.meta), **changes)


@dataclass
class GaugeMap:
    """Per-node unitary l x l matrices G(x); the new basis is (old basis) @ G."""

    grid: Grid
    matrices: np.ndarray
    tol: float = 1e-10

    def __post_init__(self):
        g = self.matrices
        eye = np.eye(g.shape[-1])
        err = np.max(np.abs(np.conj(np.swapaxes(g, -1, -2)) @ g - eye))
        if err > self.tol:
            raise NonOrthogonal(f"gauge map deviates from unitarity by {err:.2e}")


# --------------------------------------------------------------------------
# finite differences

_STENCILS = {
    "centered_fd2": {
        "interior": ((-1, 0, 1), (-0.5, 0.0, 0.5)),
        "left": [((0, 1, 2), (-1.5, 2.0, -0.5))],
        "right": [((-2, -1, 0), (0.5, -2.0, 1.5))],
    },
    "centered_fd4": {
        "interior": ((-2, -1, 0, 1, 2), tuple(np.array([1, -8, 0, 8, -1]) / 12)),
        "left": [
            ((0, 1, 2, 3, 4), tuple(np.array([-25, 48, -36, 16, -3]) / 12)),
            ((-1, 0, 1, 2, 3), tuple(np.array([-3, -10, 18, -6, 1]) / 12)),
        ],
        "right": [
            ((-4, -3, -2, -1, 0), tuple(np.array([3, -16, 36, -48, 25]) / 12)),
            ((-3, -2, -1, 0, 1), tuple(np.array([-1, 6, -18, 10, 3]) / 12)),
        ],
    },
}


def stencil_radius(scheme: str) -> int:
    return {"centered_fd2": 1, "centered_fd4": 2}.get(scheme, 0)


def _stencil_table(n: int, scheme: str):
    spec = _STENCILS[scheme]
    offsets, weights = spec["interior"]
    width = len(offsets)
    idx = np.arange(n)[:, None] + np.asarray(offsets)[None, :]
    w = np.tile(np.asarray(weights), (n, 1))
    for i, (offs, ws) in enumerate(spec["left"]):
        idx[i] = i + np.asarray(offs)
        w[i] = ws
    for i, (offs, ws) in enumerate(spec["right"]):
        idx[n - 1 - i] = n - 1 - i + np.asarray(offs)
        w[n - 1 - i] = ws
    assert idx.min() >= 0 and idx.max() < n and idx.shape[1] == width
    return idx, w


def align_frames(reference: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotate ``target`` frames (…, m, l) to be maximally aligned with ``reference``.

    Returns ``target @ V`` with V unitary such that reference^† target V is
    Hermitian positive semidefinite (polar alignment of the overlap).
    """
    overlap = np.einsum("...ma,...mb->...ab", reference.conj(), target)
    if overlap.shape[-1] == 1:
        o = overlap[..., 0, 0]
        mag = np.abs(o)
        phase = np.where(mag > 0, np.conj(o) / np.where(mag > 0, mag, 1.0), 1.0)
        return target * phase[..., None, None]
    w, _, zh = np.linalg.svd(overlap)
    v = np.conj(np.swapaxes(zh, -1, -2)) @ np.conj(np.swapaxes(w, -1, -2))
    return target @ v


def derivative(values: np.ndarray, grid: Grid, axis: int, scheme: str = DEFAULT_SCHEME, align: bool = False) -> np.ndarray:
    """d/dx_axis of sampled fibre data (grid axes leading).

    With ``align`` the samples are frames (…, m, l) and every stencil
    neighbour is first rotated onto the centre node's frame. This is a
    smooth local gauge choice, so projected derivatives (1 - P) d chi are
    unchanged while seams of the input gauge no longer matter.
    """
    h = grid.spacing[axis]
    if scheme == "spectral":
        if align:
            raise ValueError("aligned derivatives need a finite-difference scheme")
        kk = grid.derivative_wavenumbers(axis)
        shape = [1] * values.ndim
        shape[axis] = grid.nodes[axis]
        coeffs = np.fft.fft(values, axis=axis) * (1j * kk).reshape(shape)
        return np.fft.ifft(coeffs, axis=axis)
    if scheme not in _STENCILS:
        raise ValueError(f"unknown derivative scheme '{scheme}', expected one of {SCHEMES}")
    idx, w = _stencil_table(grid.nodes[axis], scheme)
    shape = [1] * values.ndim
    shape[axis] = grid.nodes[axis]
    out = np.zeros(values.shape, dtype=np.result_type(values, float))
    for s in range(idx.shape[1]):
        nb = np.take(values, idx[:, s], axis=axis)
        if align:
            nb = align_frames(values, nb)
        out += w[:, s].reshape(shape) * nb
    return out / h


def gradient(values: np.ndarray, grid: Grid, scheme: str = DEFAULT_SCHEME, align: bool = False) -> np.ndarray:
    """Stack of partial derivatives; the new axis sits right after the grid axes."""
    parts = [derivative(values, grid, k, scheme, align) for k in range(grid.d)]
    return np.stack(parts, axis=grid.d)


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    for axis in range(mask.ndim):
        for r in range(1, radius + 1):
            out |= np.roll(mask, r, axis=axis) | np.roll(mask, -r, axis=axis)
    return out


# --------------------------------------------------------------------------
# eigenframes

def crossing_exclusion(model: ElectronicModel, grid: Grid, r_min_cells: float = DEFAULT_R_MIN_CELLS) -> np.ndarray:
    """Nodes within r_min = r_min_cells * (largest spacing) of a crossing point."""
    mask = np.zeros(grid.shape, dtype=bool)
    if not model.crossing_points:
        return mask
    r_min = r_min_cells * float(np.max(grid.spacing))
    pts = grid.points()
    for c in model.crossing_points:
        mask |= np.linalg.norm(pts - np.asarray(c), axis=-1) < r_min
    return mask


def eigensystem(model: ElectronicModel, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs at every node (ascending), shapes (*nodes, m) and (*nodes, m, m)."""
    return np.linalg.eigh(model.evaluate(grid.points()))


def check_gap(energies: np.ndarray, selector: BandSelector, active: np.ndarray, threshold: float, grid: Grid) -> float:
    inside = list(selector.indices)
    outside = [i for i in range(energies.shape[-1]) if i not in inside]
    if not outside or not active.any():
        return np.inf
    e = energies[active]
    gaps = np.abs(e[:, outside][:, :, None] - e[:, inside][:, None, :]).reshape(len(e), -1).min(axis=1)
    k = int(np.argmin(gaps))
    if gaps[k] < threshold:
        where = grid.points()[active][k]
        raise GapViolation(f"gap {gaps[k]:.3e} below threshold {threshold:.1e} at x={where.tolist()}", float(gaps[k]), where)
    return float(gaps[k])


def _parallel_transport(frames: np.ndarray, excluded: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Sequential alignment along a lexicographic sweep.

    1D: node k is aligned to the last active node before it. 2D: the first
    column is swept along axis 0, then every row along axis 1. Edges not on
    this spanning tree are checked afterwards; a misaligned edge marks a seam.
    """
    f = frames.copy()
    active = ~excluded
    if grid.d == 1:
        ref = None
        for i in range(grid.nodes[0]):
            if not active[i]:
                continue
            if ref is not None:
                f[i] = align_frames(ref, f[i])
            ref = f[i]
        return f, np.zeros(grid.shape, dtype=bool)

    n0, n1 = grid.nodes
    ref = None
    for i in range(n0):
        if active[i, 0]:
            if ref is not None:
                f[i, 0] = align_frames(ref, f[i, 0])
            ref = f[i, 0]
    ref = f[:, 0].copy()
    have_ref = active[:, 0].copy()
    for j in range(1, n1):
        col = f[:, j]
        aligned = align_frames(ref, col)
        use = have_ref & active[:, j]
        col = np.where(use[:, None, None], aligned, col)
        f[:, j] = col
        upd = active[:, j]
        ref = np.where(upd[:, None, None], col, ref)
        have_ref |= upd

    # closing edges along axis 0 for j >= 1
    a, b = f[:-1, 1:], f[1:, 1:]
    both = active[:-1, 1:] & active[1:, 1:]
    ov = np.einsum("...ma,...mb->...ab", a.conj(), b)
    ell = ov.shape[-1]
    if ell == 1:
        bad = ov[..., 0, 0].real < 0.5 * np.abs(ov[..., 0, 0])
    else:
        w, _, zh = np.linalg.svd(ov)
        polar = w @ zh
        bad = np.linalg.norm(polar - np.eye(ell), axis=(-2, -1)) > 0.5
    bad &= both
    seam = np.zeros(grid.shape, dtype=bool)
    seam[:-1, 1:] |= bad
    seam[1:, 1:] |= bad
    return f, seam


def eigendecompose_smooth(
    model: ElectronicModel,
    grid: Grid,
    selector: BandSelector,
    gauge: str = "parallel_transport",
    threshold: float = DEFAULT_GAP_THRESHOLD,
    r_min_cells: float = DEFAULT_R_MIN_CELLS,
) -> tuple[FiberField, FiberField]:
    """Energies and an eigenframe of the selected bands with a fixed gauge.

    Parameters
    ----------
    gauge : {"parallel_transport", "analytic", "raw"}
        ``parallel_transport`` aligns successive nodes of a lexicographic
        sweep; ``analytic`` phase-matches each eigenvector to the model's
        closed-form frame; ``raw`` keeps the eigensolver output.

    Raises
    ------
    GapViolation
        If the selected bands come closer than ``threshold`` to the rest of
        the spectrum at a non-excluded node.
    """
    if gauge not in GAUGES:
        raise ValueError(f"unknown gauge '{gauge}', expected one of {GAUGES}")
    selector.validate(model.dim_electronic)
    excluded = crossing_exclusion(model, grid, r_min_cells)
    energies, vectors = eigensystem(model, grid)
    check_gap(energies, selector, ~excluded, threshold, grid)
    idx = list(selector.indices)
    frame = vectors[..., :, idx]
    seam = np.zeros(grid.shape, dtype=bool)
    if gauge == "analytic":
        if model.analytic_frame is None:
            raise ValueError(f"model '{model.name}' has no analytic frame")
        target = model.analytic_frame(grid.points())[..., :, idx]
        for a in range(len(idx)):
            frame[..., :, a : a + 1] = align_frames(target[..., :, a : a + 1], frame[..., :, a : a + 1])
    elif gauge == "parallel_transport":
        frame, seam = _parallel_transport(frame, excluded, grid)
        if seam.any():
            warnings.warn(
                f"parallel transport closed with nontrivial holonomy on {int(seam.sum())} nodes",
                GaugeSeamWarning,
                stacklevel=2,
            )
    bands = tuple(idx)
    meta = {"r_min_cells": r_min_cells, "threshold": threshold, "seam": seam}
    e_field = FiberField(grid, "bands", energies[..., idx], gauge, excluded.copy(), bands, dict(meta))
    f_field = FiberField(grid, "frame", frame, gauge, excluded.copy(), bands, meta)
    return e_field, f_field


def projector_field(frame: FiberField) -> FiberField:
    f = frame.samples
    p = f @ np.conj(np.swapaxes(f, -1, -2))
    return frame.with_samples(p, kind="projector")


def reduced_resolvent(energies: np.ndarray, vectors: np.ndarray, band: int) -> np.ndarray:
    """sum_{i != band} |chi_i><chi_i| / (E_i - E_band) at every node."""
    diff = energies - energies[..., band : band + 1]
    inv = np.zeros_like(diff)
    others = [i for i in range(energies.shape[-1]) if i != band]
    sub = diff[..., others]
    # degenerate partners (only reachable on excluded or gap-free nodes) get zero weight
    inv[..., others] = np.divide(1.0, sub, out=np.zeros_like(sub), where=sub != 0)
    return np.einsum("...ai,...i,...bi->...ab", vectors, inv, vectors.conj())


# --------------------------------------------------------------------------
# geometric quantities

def _hermitian(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + np.conj(np.swapaxes(mat, -1, -2)))


def berry_connection(frame: FiberField, derivative_scheme: str = DEFAULT_SCHEME) -> FiberField:
    """A_mn = i <chi_m, d chi_n> componentwise, in the gauge of ``frame``.

    The O(h^p) anti-Hermitian part produced by finite differences is
    discarded. For a single band the result is the real vector field A.
    Nodes whose stencil touches a gauge seam are excluded.
    """
    if frame.kind != "frame":
        raise ValueError("berry_connection needs a frame field")
    grid = frame.grid
    dchi = gradient(frame.samples, grid, derivative_scheme)  # (*g, d, m, l)
    chi = frame.samples[..., None, :, :]
    a = 1j * np.einsum("...ma,...mb->...ab", chi.conj(), dchi)
    a = _hermitian(a)
    excluded = frame.excluded.copy()
    seam = frame.meta.get("seam")
    if seam is not None and np.any(seam):
        excluded |= _dilate(seam, max(stencil_radius(derivative_scheme), 1))
    if a.shape[-1] == 1:
        a = a[..., 0, 0].real
    return FiberField(grid, "connection", a, frame.gauge_id, excluded, frame.bands, {"scheme": derivative_scheme})


def _projected_derivatives(frame: FiberField, scheme: str) -> np.ndarray:
    """(1 - P0) d_k chi for each axis k, shape (*g, d, m, l); gauge independent."""
    if scheme == "spectral":
        d = gradient(frame.samples, frame.grid, scheme)
    else:
        d = gradient(frame.samples, frame.grid, scheme, align=True)
    chi = frame.samples[..., None, :, :]
    coeff = np.einsum("...ma,...mb->...ab", chi.conj(), d)
    return d - chi @ coeff


def born_huang(field_in: FiberField, method: str = "eigenvector_form", derivative_scheme: str = DEFAULT_SCHEME) -> FiberField:
    """Born-Huang potential phi(x) of a single band.

    ``eigenvector_form`` evaluates sum_k |(1 - P0) d_k chi|^2 from a frame;
    ``trace_form`` evaluates Tr(dP0 . dP0 (1 - P0)) from the projector and is
    manifestly gauge invariant.
    """
    grid = field_in.grid
    if method == "eigenvector_form":
        if field_in.kind != "frame":
            raise ValueError("eigenvector_form needs a frame field")
        if field_in.samples.shape[-1] != 1:
            raise ValueError("born_huang is defined for a single band")
        proj_d = _projected_derivatives(field_in, derivative_scheme)
        phi = np.sum(np.abs(proj_d) ** 2, axis=(-3, -2, -1))
    elif method == "trace_form":
        proj = projector_field(field_in) if field_in.kind == "frame" else field_in
        p = proj.samples
        dp = gradient(p, grid, derivative_scheme)  # (*g, d, m, m)
        q = np.eye(p.shape[-1]) - p
        y = q[..., None, :, :] @ dp
        phi = np.sum(np.abs(y) ** 2, axis=(-3, -2, -1))
    else:
        raise ValueError(f"unknown method '{method}'")
    return FiberField(grid, "scalar", phi, "invariant", field_in.excluded.copy(), field_in.bands, {"method": method})


def mass_tensor(
    model: ElectronicModel,
    frame: FiberField,
    band: Optional[int] = None,
    derivative_scheme: str = DEFAULT_SCHEME,
    threshold: float = DEFAULT_GAP_THRESHOLD,
) -> FiberField:
    """m_lk(x) = <d_l chi, (H_e - E_j)^{-1} (1 - P0) d_k chi> as a real symmetric d x d field.

    The reduced resolvent is assembled spectrally from all eigenpairs. Only
    the real symmetric part enters the quantised operator, so that is what is
    stored.
    """
    if frame.samples.shape[-1] != 1:
        raise ValueError("mass_tensor is defined for a single band")
    band = frame.bands[0] if band is None else band
    grid = frame.grid
    energies, vectors = eigensystem(model, grid)
    check_gap(energies, BandSelector((band,)), frame.active, threshold, grid)
    res = reduced_resolvent(energies, vectors, band)
    a = _projected_derivatives(frame, derivative_scheme)[..., 0]  # (*g, d, m)
    ra = np.einsum("...ab,...kb->...ka", res, a)
    m = np.einsum("...la,...ka->...lk", a.conj(), ra)
    m = 0.5 * (m + np.swapaxes(m, -1, -2)).real
    return FiberField(grid, "tensor", m, "invariant", frame.excluded.copy(), (band,), {"scheme": derivative_scheme})


def curvature(a_field: FiberField, derivative_scheme: str = DEFAULT_SCHEME) -> FiberField:
    """omega_ij = -i (d_i A_j - d_j A_i) + A_j A_i - A_i A_j."""
    grid = a_field.grid
    a = a_field.samples
    scalar = a.ndim == grid.d + 1
    if scalar:
        a = a[..., None, None].astype(complex)
    d = grid.d
    da = gradient(a, grid, derivative_scheme)  # (*g, d_deriv, d_comp, l, l)
    ell = a.shape[-1]
    omega = np.zeros(grid.shape + (d, d, ell, ell), dtype=complex)
    for i in range(d):
        for j in range(d):
            ai, aj = a[..., i, :, :], a[..., j, :, :]
            omega[..., i, j, :, :] = -1j * (da[..., i, j, :, :] - da[..., j, i, :, :]) + aj @ ai - ai @ aj
    if scalar:
        omega = omega[..., 0, 0]
    return FiberField(grid, "curvature", omega, a_field.gauge_id, a_field.excluded.copy(), a_field.bands, {"scheme": derivative_scheme})


def multiband_matrices(
    model: ElectronicModel,
    basis: FiberField,
    derivative_scheme: str = DEFAULT_SCHEME,
    tol: float = 1e-8,
) -> tuple[FiberField, FiberField]:
    """W_ab = <phi_a, H_e phi_b> and A_ab = i <phi_a, d phi_b> for an l-frame.

    Raises BasisError unless the columns are orthonormal and span an
    H_e-invariant subspace (a sum of eigenspaces) at every active node.
    """
    grid = basis.grid
    f = basis.samples
    act = basis.active
    ell = f.shape[-1]
    gram = np.conj(np.swapaxes(f, -1, -2)) @ f
    if np.max(np.abs(gram - np.eye(ell))[act]) > tol:
        raise BasisError("basis columns are not orthonormal")
    h = model.evaluate(grid.points())
    hf = h @ f
    w = np.conj(np.swapaxes(f, -1, -2)) @ hf
    leak = hf - f @ w
    if np.max(np.linalg.norm(leak, axis=-2)[act]) > tol * max(1.0, float(np.max(np.abs(w[act])))):
        raise BasisError("basis does not span an invariant subspace of H_e")
    w = _hermitian(w)
    a_field = berry_connection(basis.with_samples(f, kind="frame"), derivative_scheme)
    a = a_field.samples
    if ell == 1:
        a = a[..., None, None].astype(complex)
    w_field = FiberField(grid, "matrix", w, basis.gauge_id, basis.excluded.copy(), basis.bands)
    a_out = FiberField(grid, "connection", a, basis.gauge_id, a_field.excluded, basis.bands, {"scheme": derivative_scheme})
    return w_field, a_out


def gauge_transform(
    w_field: FiberField,
    a_field: FiberField,
    g: GaugeMap,
    derivative_scheme: str = DEFAULT_SCHEME,
) -> tuple[FiberField, FiberField]:
    """Change of band basis, new basis = (old basis) @ G.

    W~ = G^{-1} W G and A~ = G^{-1} A G + i G^{-1} dG. The factor i follows
    from A = i <phi, d phi>; without it the connection would not stay
    Hermitian.
    """
    if g.grid != w_field.grid or g.grid != a_field.grid:
        raise ValueError("gauge map and fields live on different grids")
    grid = g.grid
    gm = g.matrices
    gi = np.conj(np.swapaxes(gm, -1, -2))
    a = a_field.samples
    scalar = a.ndim == grid.d + 1
    if scalar:
        a = a[..., None, None].astype(complex)
    w_new = gi @ w_field.samples @ gm
    dg = gradient(gm, grid, derivative_scheme)  # (*g, d, l, l)
    a_new = gi[..., None, :, :] @ a @ gm[..., None, :, :] + 1j * gi[..., None, :, :] @ dg
    a_new = _hermitian(a_new)
    if scalar:
        a_new = a_new[..., 0, 0].real
    gid = f"{w_field.gauge_id}+G"
    return (
        w_field.with_samples(w_new, gauge_id=gid),
        a_field.with_samples(a_new, gauge_id=gid),
    )


# --------------------------------------------------------------------------
# conical closed forms

def azimuthal_unit(x: np.ndarray) -> np.ndarray:
    """e_phi = (-x2, x1)/|x|, the direction of increasing polar angle."""
    r = np.hypot(x[..., 0], x[..., 1])
    return np.stack([-x[..., 1] / r, x[..., 0] / r], axis=-1)


def conical_closed_forms(points: np.ndarray, C: float = 1.0, band: str = "+") -> dict:
    """Berry connection, Born-Huang potential and mass tensor of one conical band.

    A = -e_phi / (2|x|) and phi = 1/(4|x|^2) for both bands; the mass tensor is
    -/+ e_phi e_phi^T / (8 C |x|^3) for the upper/lower band. The connection
    refers to the half-angle frame of :func:`~boalab.model_zoo.conical_eigenvectors`.
    """
    r = np.hypot(points[..., 0], points[..., 1])
    e = azimuthal_unit(points)
    sign = -1.0 if band == "+" else 1.0
    return {
        "A": -e / (2 * r[..., None]),
        "phi": 1.0 / (4 * r**2),
        "mass": sign * e[..., :, None] * e[..., None, :] / (8 * C * r[..., None, None] ** 3),
    }


# --------------------------------------------------------------------------
# columnar export

def write_fiber_csv(fiber: FiberField, path) -> None:
    """One row per node: index, coordinates, flattened real/imag parts, gauge id."""
    grid = fiber.grid
    pts = grid.points().reshape(-1, grid.d)
    vals = np.asarray(fiber.samples).reshape(grid.size, -1)
    n = vals.shape[1]
    header = ["node"] + [f"x{k}" for k in range(grid.d)]
    header += [f"re{i}" for i in range(n)] + [f"im{i}" for i in range(n)] + ["excluded", "gauge_id"]
    excl = fiber.excluded.reshape(-1)
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for i in range(grid.size):
            row = [i] + [f"{c:.17g}" for c in pts[i]]
            row += [f"{v:.17g}" for v in vals[i].real] + [f"{v:.17g}" for v in np.imag(vals[i])]
            row += [int(excl[i]), fiber.gauge_id]
            out.writerow(row)
