"""Periodic grids, wavefunctions and spectral kinetic operators.

States carry a trailing component axis: m electronic levels for molecular
states, l band components for nucleonic ones. Values are stored in C order with
the component index fastest.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import BoundaryError, ConfigError, GridMismatch

MIN_NODES = 16


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on a box in R^d.

    With ``offset`` the nodes sit at cell centres, so a crossing at a
    lattice point of the un-shifted grid is never sampled.
    """

    extents: tuple
    nodes: tuple
    offset: bool = False

    def __post_init__(self):
        ext = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        nodes = tuple(int(n) for n in self.nodes)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "nodes", nodes)
        if len(ext) != len(nodes) or len(ext) not in (1, 2):
            raise ConfigError("grid needs 1 or 2 axes with matching extents and nodes", field="grid")
        for lo, hi in ext:
            if not hi > lo:
                raise ConfigError(f"empty extent [{lo}, {hi}]", field="grid.extents")
        for n in nodes:
            if n < MIN_NODES or n & (n - 1):
                raise ConfigError(f"node count {n} must be a power of two >= {MIN_NODES}", field="grid.nodes")

    @classmethod
    def uniform(cls, d: int, half_width: float, n: int, offset: bool = False) -> "Grid":
        return cls(((-half_width, half_width),) * d, (n,) * d, offset)

    @property
    def d(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple:
        return self.nodes

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.extents, self.nodes)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    def axis(self, k: int) -> np.ndarray:
        lo, _ = self.extents[k]
        h = self.spacing[k]
        shift = 0.5 if self.offset else 0.0
        return lo + (np.arange(self.nodes[k]) + shift) * h

    def points(self) -> np.ndarray:
        """Node coordinates with shape (*nodes, d)."""
        axes = [self.axis(k) for k in range(self.d)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def wavenumbers(self, k: int) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.nodes[k], d=self.spacing[k])

    def derivative_wavenumbers(self, k: int) -> np.ndarray:
        """Wavenumbers for first derivatives; the unpaired Nyquist mode is zeroed."""
        kk = self.wavenumbers(k)
        kk[self.nodes[k] // 2] = 0.0
        return kk

    def _broadcast(self, vec: np.ndarray, k: int) -> np.ndarray:
        shape = [1] * self.d
        shape[k] = self.nodes[k]
        return vec.reshape(shape)

    def k_squared(self) -> np.ndarray:
        """|k|^2 on the FFT lattice, shape (*nodes,)."""
        return self._k_squared

    @cached_property
    def _k_squared(self) -> np.ndarray:
        out = np.zeros(self.nodes)
        for k in range(self.d):
            out = out + self._broadcast(self.wavenumbers(k) ** 2, k)
        out.setflags(write=False)
        return out

    @cached_property
    def _derivative_multipliers(self) -> list:
        return [np.broadcast_to(self._broadcast(self.derivative_wavenumbers(k), k), self.shape) for k in range(self.d)]

    @cached_property
    def _pair_multipliers(self) -> dict:
        out = {}
        for k in range(self.d):
            for l in range(self.d):
                kk = self._broadcast(self.wavenumbers(k), k) * self._broadcast(self.wavenumbers(l), l)
                out[k, l] = np.broadcast_to(kk, self.shape)
        return out

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.extents, tuple(n * factor for n in self.nodes), self.offset)

    def to_dict(self) -> dict:
        return {"extents": [list(e) for e in self.extents], "nodes": list(self.nodes), "offset": self.offset}

    @classmethod
    def from_dict(cls, spec: dict) -> "Grid":
        try:
            return cls(tuple(tuple(e) for e in spec["extents"]), tuple(spec["nodes"]), bool(spec.get("offset", False)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed grid spec: {exc}", field="grid") from exc


@dataclass
class GridState:
    grid: Grid
    values: np.ndarray
    eps: float = 0.0

    kind = "state"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape[:-1] != self.grid.shape:
            raise GridMismatch(f"values of shape {self.values.shape} do not fit grid {self.grid.shape}")

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def norm(self) -> float:
        return norm(self.grid, self.values)

    def normalized(self):
        return self.with_values(self.values / self.norm())

    def with_values(self, values):
        return type(self)(self.grid, values, self.eps)

    def inner(self, other) -> complex:
        check_same_grid(self.grid, other.grid)
        return inner(self.grid, self.values, other.values)


class MolecularState(GridState):
    """Wavefunction on (nuclear grid) x C^m."""

    kind = "molecular"


class NucleonicState(GridState):
    """Nucleonic wavefunction on (nuclear grid) x C^l."""

    kind = "nucleonic"


def check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatch(f"grid mismatch: {a} vs {b}")


def inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.vdot(a, b) * grid.cell_volume)


def norm(grid: Grid, a: np.ndarray) -> float:
    return float(np.sqrt(np.vdot(a, a).real * grid.cell_volume))


# --------------------------------------------------------------------------
# spectral operators on raw arrays; grid axes lead, any trailing axes follow

def _fft_axes(grid: Grid):
    return tuple(range(grid.d))


def _expand(arr: np.ndarray, ndim: int) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * (ndim - arr.ndim))


def fourier_multiply(grid: Grid, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    axes = _fft_axes(grid)
    coeffs = sfft.fftn(values, axes=axes)
    coeffs *= _expand(multiplier, values.ndim)
    return sfft.ifftn(coeffs, axes=axes, overwrite_x=True)


def kinetic_array(grid: Grid, eps: float, values: np.ndarray) -> np.ndarray:
    """-(eps^2/2) Laplacian via multiplication by eps^2 |k|^2 / 2."""
    return fourier_multiply(grid, values, 0.5 * eps**2 * grid.k_squared())


def momentum_array(grid: Grid, eps: float, values: np.ndarray, k: int) -> np.ndarray:
    """p_k = -i eps d/dx_k applied spectrally."""
    return fourier_multiply(grid, values, eps * grid._derivative_multipliers[k])


def momentum_pair_array(grid: Grid, eps: float, values: np.ndarray, k: int, l: int) -> np.ndarray:
    """p_k p_l with the full (un-zeroed) lattice, consistent with the kinetic term."""
    return fourier_multiply(grid, values, eps**2 * grid._pair_multipliers[k, l])


def kinetic_apply(eps: float, psi: GridState) -> GridState:
    """Return -(1/2) eps^2 Laplacian psi."""
    return psi.with_values(kinetic_array(psi.grid, eps, psi.values))


def kinetic_cutoff(E: float, psi: GridState, eps: Optional[float] = None) -> GridState:
    """Sharp projection onto Fourier modes with eps^2 |k|^2 / 2 <= E.

    ``eps`` defaults to the semiclassical parameter the state was prepared for.
    """
    eps = psi.eps if eps is None else eps
    mask = (0.5 * eps**2 * psi.grid.k_squared() <= E).astype(float)
    return psi.with_values(fourier_multiply(psi.grid, psi.values, mask))


def kinetic_expectation(grid: Grid, eps: float, values: np.ndarray) -> float:
    return inner(grid, values, kinetic_array(grid, eps, values)).real


def fourier_norm(grid: Grid, values: np.ndarray) -> float:
    """Norm computed from Fourier coefficients (discrete Parseval)."""
    coeffs = np.fft.fftn(values, axes=_fft_axes(grid))
    return float(np.sqrt(np.sum(np.abs(coeffs) ** 2) * grid.cell_volume / grid.size))


def fiber_density(psi: GridState) -> np.ndarray:
    """Per-node sum over components of |psi_a(x)|^2."""
    return np.sum(np.abs(psi.values) ** 2, axis=-1)


def integrate(grid: Grid, field_values: np.ndarray) -> float:
    return float(np.sum(field_values) * grid.cell_volume)


def gaussian_values(grid: Grid, center, width, momentum, eps: float) -> np.ndarray:
    """Normalised scalar Gaussian exp(-|x-x0|^2/(4 w^2) + i k0.(x-x0)/eps)."""
    x = grid.points()
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    momentum = np.broadcast_to(np.asarray(momentum, dtype=float), (grid.d,))
    dx = x - center
    phase = dx @ momentum / eps if eps > 0 else 0.0
    amp = np.exp(-np.sum(dx**2, axis=-1) / (4 * width**2) + 1j * phase)
    return amp / norm(grid, amp)


def check_support(grid: Grid, center, width: float, n_sigma: float = 5.0) -> None:
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    for k, (lo, hi) in enumerate(grid.extents):
        if center[k] - n_sigma * width < lo or center[k] + n_sigma * width > hi:
            raise BoundaryError(
                f"packet at {center.tolist()} with width {width} reaches the boundary of axis {k}"
            )


def gaussian_packet(
    grid: Grid,
    center,
    width: float,
    momentum,
    eps: float,
    spinor: Optional[Sequence[complex]] = None,
    kind: Optional[str] = None,
) -> GridState:
    """Normalised Gaussian wavepacket with O(1) kinetic energy.

    The carrier wavenumber is ``momentum / eps`` so that <p^2/2> is
    |momentum|^2 / 2 + d eps^2 / (8 width^2), bounded uniformly in eps.
    Without ``spinor`` a one-component nucleonic state is returned.
    """
    check_support(grid, center, width)
    scalar = gaussian_values(grid, center, width, momentum, eps)
    if spinor is None:
        spinor = np.ones(1)
        kind = kind or "nucleonic"
    spinor = np.asarray(spinor, dtype=complex)
    spinor = spinor / np.linalg.norm(spinor)
    kind = kind or "molecular"
    cls = MolecularState if kind == "molecular" else NucleonicState
    return cls(grid, scalar[..., None] * spinor, eps)


# --------------------------------------------------------------------------
# binary container

_MAGIC = b"BOAS"


def save_state(path, psi: GridState) -> None:
    """Write header (JSON) and little-endian complex64 payload, component fastest."""
    header = {
        "grid": psi.grid.to_dict(),
        "eps": psi.eps,
        "components": psi.components,
        "kind": psi.kind,
    }
    blob = json.dumps(header).encode("utf-8")
    payload = np.ascontiguousarray(psi.values, dtype="<c8").tobytes(order="C")
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_state(path) -> GridState:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a boalab state file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + n].decode("utf-8"))
    grid = Grid.from_dict(header["grid"])
    values = np.frombuffer(data[8 + n :], dtype="<c8").reshape(grid.shape + (header["components"],))
    cls = MolecularState if header["kind"] == "molecular" else NucleonicState
    return cls(grid, values.astype(complex), header["eps"])
