"""Brute-force and closed-form reference values used to check the fast code paths.

Everything here is deliberately built by a different route than the
production code: dense matrices instead of FFT stencils, closed-form
derivatives instead of finite differences, analytic solutions instead of
time stepping.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .adiabatic_geometry import azimuthal_unit, conical_closed_forms
from .discretization import Grid, gaussian_values, norm

# --------------------------------------------------------------------------
# dense spectral matrices (1D)


def dft_matrices(n: int):
    """Forward and inverse DFT as explicit matrices."""
    j = np.arange(n)
    f = np.exp(-2j * np.pi * np.outer(j, j) / n)
    return f, f.conj().T / n


def dense_momentum(grid: Grid, eps: float) -> np.ndarray:
    """-i eps d/dx with the Nyquist mode removed, as an n x n matrix."""
    if grid.d != 1:
        raise ValueError("dense operators are built for 1D grids only")
    n = grid.nodes[0]
    f, fi = dft_matrices(n)
    k = 2 * np.pi * np.fft.fftfreq(n, d=grid.spacing[0])
    k[n // 2] = 0.0
    return eps * fi @ np.diag(k) @ f


def dense_momentum_squared(grid: Grid, eps: float) -> np.ndarray:
    """-eps^2 d^2/dx^2 keeping the Nyquist mode."""
    n = grid.nodes[0]
    f, fi = dft_matrices(n)
    k = 2 * np.pi * np.fft.fftfreq(n, d=grid.spacing[0])
    return eps**2 * fi @ np.diag(k**2) @ f


def block_diag(mats: np.ndarray) -> np.ndarray:
    """Block-diagonal matrix from a stack (n, a, b) of nodal matrices."""
    n, a, b = mats.shape
    out = np.zeros((n * a, n * b), dtype=complex)
    for i in range(n):
        out[i * a : (i + 1) * a, i * b : (i + 1) * b] = mats[i]
    return out


def lift(op: np.ndarray, m: int) -> np.ndarray:
    """Act with a scalar grid operator on every one of m components."""
    return np.kron(op, np.eye(m))


def dense_p1(b: np.ndarray, grid: Grid, eps: float) -> np.ndarray:
    """P1 = p B + B^* p from nodal B of shape (n, 1, m, m)."""
    m = b.shape[-1]
    p = lift(dense_momentum(grid, eps), m)
    bb = block_diag(b[:, 0])
    return p @ bb + bb.conj().T @ p


def dense_intertwiner(chi: np.ndarray, b: np.ndarray, grid: Grid, eps: float):
    """U_(1) and U_(1)^* as dense matrices; chi has shape (n, m, l)."""
    m = chi.shape[-2]
    p = lift(dense_momentum(grid, eps), m)
    bb = block_diag(b[:, 0])
    c = block_diag(chi)
    eye = np.eye(p.shape[0])
    u = c.conj().T @ (eye + eps * p @ bb)
    u_star = (eye + eps * bb.conj().T @ p) @ c
    return u, u_star


def dense_effective(heff) -> np.ndarray:
    """Dense matrix of a 1D EffectiveHamiltonian, assembled term by term."""
    grid, eps = heff.grid, heff.eps
    ell = heff.n_bands
    n = grid.nodes[0]
    p = dense_momentum(grid, eps)
    p2 = dense_momentum_squared(grid, eps)
    h = 0.5 * lift(p2, ell)
    if heff.potential.ndim == 1:
        h = h + np.diag(heff.potential.astype(complex))
    else:
        h = h + block_diag(heff.potential)
    if heff.connection is not None:
        a = heff.connection
        if a.ndim == 2:
            da = np.diag(a[:, 0].astype(complex))
            h = h - 0.5 * eps * (p @ da + da @ p) + 0.5 * eps**2 * da @ da
        else:
            ba = block_diag(a[:, 0])
            pl = lift(p, ell)
            h = h - 0.5 * eps * (pl @ ba + ba @ pl)
    if heff.born_huang is not None:
        h = h + 0.5 * eps**2 * np.diag(heff.born_huang.astype(complex))
    if heff.mass is not None:
        dm = np.diag(heff.mass[:, 0, 0].astype(complex))
        if heff.quantization == "symmetric":
            mm = 0.5 * (dm @ p2 + p2 @ dm)
        else:
            mm = p @ dm @ p
        h = h - eps**2 * mm
    assert h.shape == (n * ell, n * ell)
    return h


# --------------------------------------------------------------------------
# B field at a point


def b_norm_avoided_crossing(delta: float, x: float, shape_derivative=None, profile=np.tanh) -> float:
    """|B(x)| for the lower band of [[f, delta], [delta, -f]] from closed-form derivatives.

    With mixing angle theta = atan2(delta, f)/2 the lower eigenvector is
    (-sin theta, cos theta); P0 dP0 R reduces to -theta' v u^T / (2E), so
    |B| = |theta'| / (2E) with E = sqrt(f^2 + delta^2).
    """
    f = profile(x)
    fp = shape_derivative(x) if shape_derivative is not None else 1.0 / np.cosh(x) ** 2
    theta_p = -0.5 * delta * fp / (f**2 + delta**2)
    return abs(theta_p) / (2.0 * math.sqrt(f**2 + delta**2))


def b_norm_conical(x, C: float = 1.0) -> float:
    """|B(x)| = 1/(4 C |x|^2) for either conical band (Frobenius over components)."""
    r = float(np.hypot(x[0], x[1]))
    return 1.0 / (4.0 * C * r**2)


# --------------------------------------------------------------------------
# truncation bound for the conical fields

_STENCIL_ERROR = {0: 1.0 / 5.0, 1: 1.0 / 20.0}
_INTERIOR_ERROR = 1.0 / 30.0


def _fifth_derivative_bounds(d: np.ndarray, theta: float = 0.9):
    """Cauchy bounds on |d^5/dt^5| of the raw and the locally aligned half-angle frame.

    Along a grid line the raw eigenvector is affine in u = ((t+ib)/(t-ib))^(1/2)
    and the aligned one in u^(1/2), u^(-1/2). Both are analytic within distance
    r of t, and on a circle of radius theta*r their modulus is at most
    ((1+theta)/(1-theta))^(1/2) resp. ^(1/4).
    """
    q = (1 + theta) / (1 - theta)
    scale = 120.0 / (theta * d) ** 5
    raw = scale * math.sqrt(q) / math.sqrt(2.0)
    aligned = scale * q**0.25 * math.sqrt(2.0)
    return raw, aligned


def _segment_distance(grid: Grid, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each stencil segment to the origin, and the stencil error constant."""
    pts = grid.points()
    n = grid.nodes[axis]
    h = grid.spacing[axis]
    idx = np.arange(n)
    lo = np.clip(idx - 2, 0, None)
    hi = np.clip(idx + 2, None, n - 1)
    lo = np.where(idx == n - 1, n - 5, np.where(idx == n - 2, n - 5, lo))
    hi = np.where(idx == 0, 4, np.where(idx == 1, 4, hi))
    const = np.full(n, _INTERIOR_ERROR)
    const[[0, n - 1]] = _STENCIL_ERROR[0]
    const[[1, n - 2]] = _STENCIL_ERROR[1]
    start = grid.extents[axis][0] + (0.5 * h if grid.offset else 0.0)
    t_lo, t_hi = start + lo * h, start + hi * h
    shape = [1] * grid.d
    shape[axis] = n
    t_lo, t_hi, const = t_lo.reshape(shape), t_hi.reshape(shape), const.reshape(shape)
    other = pts[..., 1 - axis]
    t_near = np.clip(0.0, t_lo, t_hi)
    dist = np.hypot(t_near, other)
    return dist, np.broadcast_to(const, grid.shape)


def conical_fd_bounds(grid: Grid, C: float = 1.0) -> dict:
    """Rigorous per-node FD4 truncation bounds for A, phi and the mass tensor."""
    h = grid.spacing
    raw, aligned = [], []
    for axis in range(2):
        dist, const = _segment_distance(grid, axis)
        b_raw, b_al = np.vectorize(_fifth_derivative_bounds)(dist)
        raw.append(const * h[axis] ** 4 * b_raw)
        aligned.append(const * h[axis] ** 4 * b_al)
    raw, aligned = np.stack(raw, -1), np.stack(aligned, -1)
    pts = grid.points()
    r = np.hypot(pts[..., 0], pts[..., 1])
    a_abs = np.abs(azimuthal_unit(pts)) / (2 * r[..., None])  # |(1-P) d_k chi|
    phi = np.sum(2 * a_abs * aligned + aligned**2, axis=-1)
    mass = (a_abs[..., :, None] * aligned[..., None, :] + aligned[..., :, None] * a_abs[..., None, :]
            + aligned[..., :, None] * aligned[..., None, :]) / (2 * C * r[..., None, None])
    return {"A": raw, "phi": phi, "mass": mass}


# --------------------------------------------------------------------------
# analytic wavepackets


def free_gaussian(grid: Grid, x0, width: float, k0, eps: float, t: float) -> np.ndarray:
    """Exact solution of i eps psi_t = -(eps^2/2) psi'' from the standard packet.

    Uses the complex width s_t^2 = width^2 (1 + i eps t / (2 width^2)).
    """
    x = grid.points()
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.d,))
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (grid.d,))
    z = 1.0 + 1j * eps * t / (2 * width**2)
    dx = x - x0
    moved = dx - k0 * t
    expo = -np.sum(moved**2, axis=-1) / (4 * width**2 * z) + 1j * (dx @ k0) / eps - 1j * np.dot(k0, k0) * t / (2 * eps)
    amp = (2 * np.pi * width**2) ** (-grid.d / 4) * z ** (-grid.d / 2)
    return amp * np.exp(expo)


def harmonic_coherent(grid: Grid, x0: float, eps: float, t: float) -> tuple[np.ndarray, float]:
    """Coherent state of 1/2 p^2 + 1/2 x^2 (hbar = eps) at time t, up to a global phase.

    Returns the state and its classical centre x0 cos t.
    """
    x = grid.points()[..., 0]
    xc, pc = x0 * math.cos(t), -x0 * math.sin(t)
    psi = (np.pi * eps) ** (-0.25) * np.exp(-((x - xc) ** 2) / (2 * eps) + 1j * pc * (x - xc) / eps)
    return psi, xc


def gaussian_kinetic_expectation(width: float, k0, eps: float, d: int = 1) -> float:
    """<p^2/2> of the packet with carrier k0/eps: |k0|^2/2 + d eps^2 / (8 width^2)."""
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (d,))
    return 0.5 * float(np.dot(k0, k0)) + d * eps**2 / (8 * width**2)


def gaussian_second_derivative(grid: Grid, x0: float, width: float, k0: float, eps: float) -> np.ndarray:
    """Closed-form d^2/dx^2 of the normalised 1D packet."""
    x = grid.points()[..., 0]
    g = gaussian_values(grid, x0, width, k0, eps)
    a = -(x - x0) / (2 * width**2) + 1j * k0 / eps
    return (a**2 - 1 / (2 * width**2)) * g


# --------------------------------------------------------------------------
# conical comparisons


def conical_field_errors(grid: Grid, C: float = 1.0, fields: Optional[dict] = None) -> dict:
    """Max error and max (error / tolerance) of computed conical fields vs closed forms.

    ``fields`` holds the computed A, phi, mass and the excluded mask; the
    tolerance at each node is max(1e-8, truncation bound).
    """
    exact = conical_closed_forms(grid.points(), C, "+")
    bounds = conical_fd_bounds(grid, C)
    act = ~fields["excluded"]
    out = {}
    for key, comp in (("A", "A"), ("phi", "phi"), ("mass", "mass")):
        err = np.abs(fields[comp] - exact[comp])
        tol = np.maximum(1e-8, bounds[comp])
        out[key] = {"max_error": float(err[act].max()), "max_ratio": float((err / tol)[act].max()),
                    "max_bound": float(bounds[comp][act].max())}
    return out


def adi_dia_residuals(C: float, eps: float, grid: Grid, r0: float = 2.5, width: float = 0.25) -> dict:
    """Residuals of the adiabatic/diabatic equivalence for annulus packets.

    ``derived`` uses coupling coefficients (1/2, 1/4); ``display`` uses (1, 1/2)
    with the azimuthal direction e_phi = (-x2, x1)/|x|; ``display_flipped``
    uses (-1, 1/2), i.e. the opposite azimuthal direction.
    """
    from .propagators import adi_dia_pair

    pair = adi_dia_pair(C, eps, grid)
    rng = np.random.default_rng(1)
    worst = {"derived": 0.0, "display": 0.0, "display_flipped": 0.0, "eps0": 0.0}
    pair0 = adi_dia_pair(C, 0.0, grid)
    for ang in np.linspace(0, 2 * np.pi, 4, endpoint=False):
        c = r0 * np.array([math.cos(ang), math.sin(ang)])
        mom = rng.uniform(-1, 1, size=2)
        psi = gaussian_values(grid, c, width, mom, eps)
        s = rng.normal(size=2) + 1j * rng.normal(size=2)
        v = psi[..., None] * (s / np.linalg.norm(s))
        worst["derived"] = max(worst["derived"], pair.residual(v))
        worst["display"] = max(worst["display"], pair.residual(v, (1.0, 0.5)))
        worst["display_flipped"] = max(worst["display_flipped"], pair.residual(v, (-1.0, 0.5)))
        worst["eps0"] = max(worst["eps0"], pair0.residual(v))
    worst["nodes"] = list(grid.nodes)
    return worst


# --------------------------------------------------------------------------
# registry for the CLI


def _oracle_conical():
    g = Grid.uniform(2, 3.0, 128, offset=True)
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    cf = conical_closed_forms(x, 1.0, "+")
    return {
        "A_plus(1,0)": cf["A"][0].tolist(),
        "A_plus(0,2)": cf["A"][1].tolist(),
        "phi_plus(1,0)": float(cf["phi"][0]),
        "mass_plus(1,0)": cf["mass"][0].tolist(),
        "max_A_bound_128": float(np.max(conical_fd_bounds(g)["A"][np.hypot(*np.moveaxis(g.points(), -1, 0)) > 0.1])),
        "provenance": "closed forms from the half-angle eigenvectors; bounds from Cauchy estimates",
    }


def _oracle_b():
    return {
        "conical |B|(1,0)": b_norm_conical([1.0, 0.0]),
        "avoided crossing delta=0.5 |B|(0)": b_norm_avoided_crossing(0.5, 0.0),
        "provenance": "P0 dP0 R assembled from closed-form eigenvector derivatives",
    }


def _oracle_free():
    g = Grid.uniform(1, 12.0, 512)
    psi = free_gaussian(g, -1.0, 0.5, 0.7, 0.1, 1.0)
    return {"norm(t=1)": norm(g, psi), "provenance": "analytic dispersing Gaussian"}


def _oracle_harmonic():
    g = Grid.uniform(1, 6.0, 256)
    psi, xc = harmonic_coherent(g, 1.0, 0.1, 2 * np.pi)
    return {"center(T=2pi)": xc, "norm": norm(g, psi), "provenance": "coherent state, classical trajectory x0 cos t"}


def _oracle_kinetic():
    return {"<p^2/2>(sigma=0.5,k0=0.7,eps=0.1)": gaussian_kinetic_expectation(0.5, 0.7, 0.1),
            "provenance": "Gaussian moment identity"}


def _oracle_adi_dia():
    res = adi_dia_residuals(1.0, 0.05, Grid.uniform(2, 5.0, 128, offset=True))
    res["provenance"] = "Phi^dagger H_dia Phi - H_adi on annulus packets"
    return res


ORACLES = {
    "conical": _oracle_conical,
    "b_field": _oracle_b,
    "free_gaussian": _oracle_free,
    "harmonic": _oracle_harmonic,
    "gaussian_kinetic": _oracle_kinetic,
    "adi_dia": _oracle_adi_dia,
}


def run_oracle(name: str) -> dict:
    if name not in ORACLES:
        raise KeyError(f"unknown oracle '{name}', choose from {sorted(ORACLES)}")
    return ORACLES[name]()
