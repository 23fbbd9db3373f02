"""Matrix-valued electronic Hamiltonians H_e(x) and gap diagnostics.

Every model is a smooth map from nuclear configurations x in R^d (d = 1 or 2)
to Hermitian m x m matrices. Evaluators are vectorised: they take an array of
points with trailing axis d and return matrices with two trailing axes m x m.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

HERMITIAN_TOL = 1e-12
DEFAULT_GAP_THRESHOLD = 1e-6


@dataclass(frozen=True)
class ElectronicModel:
    """A finite-dimensional electronic Hamiltonian depending on x.

    ``analytic_bands`` and ``analytic_frame`` are optional closed forms,
    both vectorised like ``evaluator``. Bands are sorted ascending and the
    frame has eigenvectors as columns in the same order.
    """

    name: str
    dim_nuclear: int
    dim_electronic: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    domain: Optional[tuple] = None
    crossing_points: tuple = ()
    analytic_bands: Optional[Callable[[np.ndarray], np.ndarray]] = None
    analytic_frame: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_nuclear not in (1, 2):
            raise ConfigError("nuclear dimension must be 1 or 2", field="dim_nuclear")
        if self.dim_electronic < 2:
            raise ConfigError("electronic dimension must be at least 2", field="dim_electronic")

    @property
    def has_analytic_hints(self) -> bool:
        return self.analytic_bands is not None

    def evaluate(self, points) -> np.ndarray:
        """Evaluate H_e on an array of points of shape (..., d)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim_nuclear:
            raise DomainError(
                f"points have trailing dimension {pts.shape[-1]}, model expects {self.dim_nuclear}"
            )
        return np.asarray(self.evaluator(pts), dtype=complex)

    def in_domain(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.domain is None:
            return np.ones(pts.shape[:-1], dtype=bool)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for axis, (lo, hi) in enumerate(self.domain):
            ok &= (pts[..., axis] >= lo) & (pts[..., axis] <= hi)
        return ok


@dataclass(frozen=True)
class BandSelector:
    """An ordered set I of band labels (0 = lowest eigenvalue)."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ConfigError("band selector must be nonempty", field="bands")
        if len(set(idx)) != len(idx):
            raise ConfigError("band selector has repeated indices", field="bands")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    def validate(self, dim_electronic: int) -> None:
        for i in self.indices:
            if not 0 <= i < dim_electronic:
                raise ConfigError(
                    f"band index {i} invalid for {dim_electronic} electronic levels", field="bands"
                )

    def complement(self, dim_electronic: int) -> tuple:
        return tuple(i for i in range(dim_electronic) if i not in self.indices)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class GapReport:
    min_gap: float
    argmin: np.ndarray
    threshold: float

    @property
    def violation(self) -> bool:
        return self.min_gap < self.threshold


def eval_electronic(model: ElectronicModel, x) -> np.ndarray:
    """Return H_e(x) at a single nuclear configuration."""
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    if pt.shape != (model.dim_nuclear,):
        raise DomainError(f"expected a point in R^{model.dim_nuclear}, got shape {pt.shape}")
    if not np.isfinite(pt).all() or not model.in_domain(pt):
        raise DomainError(f"{pt.tolist()} lies outside the domain of model '{model.name}'")
    h = model.evaluate(pt)
    if np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOL:
        raise ValueError(f"model '{model.name}' returned a non-Hermitian matrix at {pt.tolist()}")
    return h


def sorted_eigensystem(model: ElectronicModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending, with multiplicity) and eigenvectors at many points."""
    h = model.evaluate(points)
    return np.linalg.eigh(h)


def gap_profile(
    model: ElectronicModel,
    region,
    selector: BandSelector,
    threshold: float = DEFAULT_GAP_THRESHOLD,
) -> GapReport:
    """Minimum over ``region`` of the gap between the bands in I and the rest.

    The returned report carries a ``violation`` flag instead of raising; the
    caller decides whether a small gap is fatal.
    """
    pts = np.asarray(region, dtype=float).reshape(-1, model.dim_nuclear)
    if pts.shape[0] == 0:
        raise ConfigError("gap_profile needs a nonempty region", field="region")
    selector.validate(model.dim_electronic)
    energies = np.linalg.eigvalsh(model.evaluate(pts))
    inside = list(selector.indices)
    outside = list(selector.complement(model.dim_electronic))
    if not outside:
        return GapReport(np.inf, pts[0], threshold)
    diffs = np.abs(energies[:, outside][:, :, None] - energies[:, inside][:, None, :])
    per_point = diffs.reshape(len(pts), -1).min(axis=1)
    k = int(np.argmin(per_point))
    return GapReport(float(per_point[k]), pts[k], threshold)


# --------------------------------------------------------------------------
# model constructors

def conical_model(C: float = 1.0) -> ElectronicModel:
    """Two-level conical crossing W(x) = C [[x1, x2], [x2, -x1]] on R^2.

    Bands are -C|x| and +C|x|. The analytic frame is the single-valued
    half-angle family; column 0 is the lower eigenvector, column 1 the upper.
    """
    if C <= 0:
        raise ConfigError("conical slope C must be positive", field="C")

    def evaluator(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = np.empty(x.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0] = C * x1
        out[..., 0, 1] = C * x2
        out[..., 1, 0] = C * x2
        out[..., 1, 1] = -C * x1
        return out

    def bands(x):
        r = np.hypot(x[..., 0], x[..., 1])
        return np.stack([-C * r, C * r], axis=-1)

    def frame(x):
        xi_plus, xi_minus = conical_eigenvectors(x)
        return np.stack([xi_minus, xi_plus], axis=-1)

    return ElectronicModel(
        name="conical",
        dim_nuclear=2,
        dim_electronic=2,
        evaluator=evaluator,
        crossing_points=((0.0, 0.0),),
        analytic_bands=bands,
        analytic_frame=frame,
        params={"C": float(C)},
    )


def conical_eigenvectors(x) -> tuple[np.ndarray, np.ndarray]:
    """Half-angle eigenvectors (xi_plus, xi_minus) of the conical model.

    xi_+ = e^{i phi/2} (cos phi/2, sin phi/2) and
    xi_- = e^{i phi/2} (-sin phi/2, cos phi/2). Written through e^{i phi} they are
    single-valued on R^2 minus the origin.
    """
    x = np.asarray(x, dtype=float)
    phi = np.arctan2(x[..., 1], x[..., 0])
    u = np.exp(1j * phi)
    xi_plus = 0.5 * np.stack([1 + u, -1j * (u - 1)], axis=-1)
    xi_minus = 0.5 * np.stack([1j * (u - 1), 1 + u], axis=-1)
    return xi_plus, xi_minus


_PROFILES = {
    "tanh": np.tanh,
    "linear": lambda x: x,
    "arctan": np.arctan,
}


def make_avoided_crossing_1d(delta: float, shape: str = "tanh") -> ElectronicModel:
    """Two-level avoided crossing [[f(x), delta], [delta, -f(x)]] on R."""
    if not delta > 0:
        raise ConfigError(f"coupling delta must be positive, got {delta}", field="delta")
    if shape not in _PROFILES:
        raise ConfigError(f"unknown profile '{shape}', expected one of {sorted(_PROFILES)}", field="shape")
    f = _PROFILES[shape]

    def evaluator(x):
        fx = f(x[..., 0])
        out = np.empty(x.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0] = fx
        out[..., 0, 1] = delta
        out[..., 1, 0] = delta
        out[..., 1, 1] = -fx
        return out

    def bands(x):
        e = np.sqrt(f(x[..., 0]) ** 2 + delta**2)
        return np.stack([-e, e], axis=-1)

    def frame(x):
        # real eigenvectors: rotation by half the mixing angle
        theta = 0.5 * np.arctan2(delta, f(x[..., 0]))
        c, s = np.cos(theta), np.sin(theta)
        lower = np.stack([-s, c], axis=-1)
        upper = np.stack([c, s], axis=-1)
        return np.stack([lower, upper], axis=-1).astype(complex)

    return ElectronicModel(
        name=f"avoided_crossing_{shape}",
        dim_nuclear=1,
        dim_electronic=2,
        evaluator=evaluator,
        analytic_bands=bands,
        analytic_frame=frame,
        params={"delta": float(delta), "shape": shape},
    )


def constant_model(energies: Sequence[float] = (-1.0, 1.0), dim_nuclear: int = 1) -> ElectronicModel:
    """x-independent diagonal Hamiltonian; all geometric terms vanish."""
    e = np.asarray(energies, dtype=float)
    if np.any(np.diff(e) <= 0):
        raise ConfigError("constant model energies must be strictly increasing", field="energies")
    m = len(e)

    def evaluator(x):
        return np.broadcast_to(np.diag(e).astype(complex), x.shape[:-1] + (m, m)).copy()

    return ElectronicModel(
        name="constant",
        dim_nuclear=dim_nuclear,
        dim_electronic=m,
        evaluator=evaluator,
        analytic_bands=lambda x: np.broadcast_to(e, x.shape[:-1] + (m,)).copy(),
        analytic_frame=lambda x: np.broadcast_to(np.eye(m, dtype=complex), x.shape[:-1] + (m, m)).copy(),
        params={"energies": e.tolist()},
    )


def scalar_potential_model(
    potential: Callable[[np.ndarray], np.ndarray],
    dim_nuclear: int = 1,
    dim_electronic: int = 2,
    name: str = "scalar",
) -> ElectronicModel:
    """H_e(x) = V(x) * identity. ``potential`` maps (..., d) points to (...) values."""
    m = dim_electronic

    def evaluator(x):
        v = np.asarray(potential(x), dtype=float)
        return v[..., None, None] * np.eye(m, dtype=complex)

    return ElectronicModel(
        name=name,
        dim_nuclear=dim_nuclear,
        dim_electronic=m,
        evaluator=evaluator,
        params={},
    )


def harmonic_model(omega: float = 1.0, dim_nuclear: int = 1) -> ElectronicModel:
    """Scalar harmonic potential 0.5 * omega^2 |x|^2 on every electronic level."""
    model = scalar_potential_model(
        lambda x: 0.5 * omega**2 * np.sum(x**2, axis=-1), dim_nuclear=dim_nuclear, name="harmonic"
    )
    model.params["omega"] = float(omega)
    return model


def free_model(dim_nuclear: int = 1) -> ElectronicModel:
    return scalar_potential_model(lambda x: np.zeros(x.shape[:-1]), dim_nuclear=dim_nuclear, name="free")


def model_from_config(spec: dict) -> ElectronicModel:
    """Build a model from a declarative record ``{"name": ..., <params>}``."""
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("model section needs a 'name'", field="model.name")
    name = spec["name"]
    try:
        if name == "conical":
            return conical_model(float(spec.get("C", 1.0)))
        if name == "avoided_crossing":
            return make_avoided_crossing_1d(float(spec.get("delta", 0.5)), spec.get("shape", "tanh"))
        if name == "constant":
            return constant_model(spec.get("energies", (-1.0, 1.0)), int(spec.get("dim_nuclear", 1)))
        if name == "harmonic":
            return harmonic_model(float(spec.get("omega", 1.0)), int(spec.get("dim_nuclear", 1)))
        if name == "free":
            return free_model(int(spec.get("dim_nuclear", 1)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), field="model") from exc
    raise ConfigError(f"unknown model '{name}'", field="model.name")
