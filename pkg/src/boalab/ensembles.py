"""Reproducible ensembles of bounded-kinetic-energy wavepackets."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .discretization import Grid, check_support, fourier_multiply, gaussian_values, norm
from .errors import ConfigError, EnsembleError

MAX_CUTOFF_LOSS = 1e-8


@dataclass(frozen=True)
class EnsembleSpec:
    """Random Gaussian packets; parameters are drawn once from ``seed`` and reused for every eps.

    Momenta are given in the O(1) units of p = -i eps grad, so each packet's
    carrier wavenumber is momentum / eps and its kinetic energy stays bounded
    as eps shrinks.
    """

    n_states: int = 32
    kinetic_bound: float = 4.0
    seed: int = 0
    center_range: tuple = (-2.0, 2.0)
    width_range: tuple = (0.5, 0.8)
    momentum_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.n_states < 1:
            raise ConfigError("ensemble needs at least one state", field="ensemble.n_states")
        if self.kinetic_bound <= 0:
            raise ConfigError("kinetic bound must be positive", field="ensemble.kinetic_bound")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, spec: dict) -> "EnsembleSpec":
        known = {"n_states", "kinetic_bound", "seed", "center_range", "width_range", "momentum_range"}
        extra = set(spec) - known
        if extra:
            raise ConfigError(f"unknown ensemble keys {sorted(extra)}", field="ensemble")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in spec.items()}
        return cls(**kw)

    def parameters(self, d: int, components: int = 1) -> list[dict]:
        """Per-state centre, width, momentum and (for components > 1) a unit spinor."""
        rng = np.random.default_rng(self.seed)
        out = []
        for _ in range(self.n_states):
            p = {
                "center": rng.uniform(*self.center_range, size=d),
                "width": float(rng.uniform(*self.width_range)),
                "momentum": rng.uniform(*self.momentum_range, size=d),
            }
            s = rng.normal(size=components) + 1j * rng.normal(size=components)
            p["spinor"] = s / np.linalg.norm(s)
            out.append(p)
        return out

    def generate(self, grid: Grid, eps: float, components: int = 1) -> list[np.ndarray]:
        """Sample arrays of shape (*nodes, components).

        Each packet is passed through the sharp cutoff 1(eps^2 |k|^2 / 2 <= E);
        EnsembleError is raised if that removes more than 1e-8 of its mass.
        """
        mask = (0.5 * eps**2 * grid.k_squared() <= self.kinetic_bound).astype(float)
        states = []
        for i, p in enumerate(self.parameters(grid.d, components)):
            check_support(grid, p["center"], p["width"])
            g = gaussian_values(grid, p["center"], p["width"], p["momentum"], eps)
            cut = fourier_multiply(grid, g, mask)
            loss = 1.0 - norm(grid, cut) ** 2
            if loss > MAX_CUTOFF_LOSS:
                raise EnsembleError(f"state {i} loses {loss:.2e} of its mass to the kinetic cutoff E={self.kinetic_bound}")
            cut = cut / norm(grid, cut)
            spinor = p["spinor"] if components > 1 else np.ones(1)
            states.append(cut[..., None] * spinor)
        return states
