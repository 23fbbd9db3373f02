"""Epsilon sweeps, slope fits, reports and the conical comparison study."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .discretization import Grid, fiber_density, gaussian_values, integrate, norm
from .ensembles import EnsembleSpec
from .errors import BoaLabError, ConfigError, DegenerateFit
from .fitting import SlopeFit, fit_slope
from .model_zoo import BandSelector, ElectronicModel, conical_model, model_from_config
from .propagators import (
    build_effective,
    intertwiners,
    propagate_effective,
    propagate_full,
    worker_count,
)
from .superadiabatic import projector_defect, unitarity_defect

__all__ = [
    "ExperimentConfig",
    "ScalingReport",
    "SweepData",
    "conical_correction_study",
    "density_gap",
    "error_curve",
    "fit_slope",
    "load_config",
    "run_experiment",
    "run_sweep",
]

R2_MIN = 0.98
REFINEMENT_TOL = 0.15
NORM_DRIFT_MAX = 1e-8
ENERGY_DRIFT_MAX = 1e-6
STUDIES = ("error_curve", "density_gap", "defects", "conical", "adi_dia")
SECTIONS = {"study", "model", "grid", "bands", "orders", "epsilons", "time", "ensemble", "output", "tolerances", "options"}


# --------------------------------------------------------------------------
# configuration

def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


@dataclass
class ExperimentConfig:
    study: str
    model: dict
    grid: Grid
    bands: tuple
    orders: tuple
    epsilons: tuple
    T: float
    ensemble: EnsembleSpec
    output: dict
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, text: Optional[str] = None) -> "ExperimentConfig":
        def fail(msg, key):
            raise ConfigError(msg, field=key, line=_line_of(text, key.split(".")[-1]))

        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - SECTIONS
        if unknown:
            fail(f"unknown sections {sorted(unknown)}", sorted(unknown)[0])
        for key in ("model", "grid", "epsilons", "time", "ensemble", "output"):
            if key not in data:
                raise ConfigError(f"missing section '{key}'", field=key)
        study = data.get("study", "error_curve")
        if study not in STUDIES:
            fail(f"unknown study '{study}', expected one of {STUDIES}", "study")

        eps = data["epsilons"]
        if not isinstance(eps, list) or not all(isinstance(e, (int, float)) for e in eps):
            fail("epsilons must be a list of numbers", "epsilons")
        eps = tuple(float(e) for e in eps)
        if study not in ("conical", "adi_dia"):
            if len(eps) < 4:
                fail(f"need at least 4 epsilon values, got {len(eps)}", "epsilons")
            if any(e <= 0 for e in eps):
                fail("epsilon values must be positive", "epsilons")
            ratios = [b / a for a, b in zip(eps, eps[1:])]
            if any(r >= 1 for r in ratios):
                fail("epsilon list must be strictly decreasing", "epsilons")
            if any(not 0.3 <= r <= 0.8 for r in ratios):
                fail(f"consecutive epsilon ratios {ratios} must lie in [0.3, 0.8]", "epsilons")
        elif not eps or any(e <= 0 for e in eps):
            fail("epsilon values must be positive", "epsilons")

        try:
            grid = Grid.from_dict(data["grid"])
        except ConfigError as exc:
            raise ConfigError(str(exc), field="grid", line=_line_of(text, "grid")) from exc
        except ValueError as exc:
            fail(str(exc), "grid")
        try:
            model_spec = dict(data["model"])
            model = model_from_config(model_spec)
        except ConfigError as exc:
            raise ConfigError(str(exc), field=exc.field or "model", line=_line_of(text, "model")) from exc
        if model.dim_nuclear != grid.d:
            fail(f"model has nuclear dimension {model.dim_nuclear}, grid has {grid.d}", "grid")

        bands = tuple(int(b) for b in data.get("bands", [0]))
        BandSelector(bands).validate(model.dim_electronic)
        orders = tuple(int(o) for o in data.get("orders", [1]))
        if any(o not in (0, 1, 2) for o in orders):
            fail(f"orders must be in {{0, 1, 2}}, got {list(orders)}", "orders")

        t = data["time"]
        T = float(t.get("T", 1.0)) if isinstance(t, dict) else float(t)
        if not T >= 0:
            fail("final time must be nonnegative", "time")

        ens = data["ensemble"]
        if not isinstance(ens, dict):
            fail("ensemble must be an object", "ensemble")
        if int(ens.get("n_states", 0)) < 8:
            fail(f"ensemble needs N >= 8 states, got {ens.get('n_states')}", "n_states")
        try:
            ensemble = EnsembleSpec.from_dict(ens)
        except (TypeError, ValueError) as exc:
            fail(str(exc), "ensemble")
        out = data["output"]
        if not isinstance(out, dict) or "path" not in out:
            fail("output needs a 'path'", "output")
        return cls(study, model_spec, grid, bands, orders, eps, T, ensemble, dict(out),
                   dict(data.get("tolerances", {})), dict(data.get("options", {})), data)

    def build_model(self) -> ElectronicModel:
        return model_from_config(self.model)

    def with_grid(self, grid: Grid) -> "ExperimentConfig":
        return ExperimentConfig(self.study, self.model, grid, self.bands, self.orders, self.epsilons, self.T,
                                self.ensemble, self.output, self.tolerances, self.options, self.raw)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return ExperimentConfig.from_dict(data, text)


# --------------------------------------------------------------------------
# sweeps

@dataclass
class SweepData:
    """Per-eps, per-state comparison of full and effective dynamics at time T."""

    order: int
    eps: list
    nodes: tuple
    errors: list
    density_gaps: list
    norm_drift: float
    energy_drift: float
    wall: float


def _one_eps(model, grid, band, order, eps, T, ensemble, gauge, quantization, krylov_tol):
    heff = build_effective(model, grid, band, order, eps, gauge=gauge, quantization=quantization)
    u, u_star = intertwiners(heff)
    psis = ensemble.generate(grid, eps, 1)
    full = propagate_full(model, grid, eps, [u_star(p) for p in psis], T)
    eff = propagate_effective(heff, psis, T, tol=krylov_tol)
    errs, gaps = [], []
    for big, small in zip(full.final, eff.final):
        errs.append(norm(grid, big - u_star(small)))
        gaps.append(float(np.max(np.abs(np.sum(np.abs(big) ** 2, axis=-1) - np.abs(small[..., 0]) ** 2))))
    drifts = (max(full.norm_drift, eff.norm_drift), max(full.energy_drift, eff.energy_drift))
    return errs, gaps, drifts


def run_sweep(
    model: ElectronicModel,
    grid: Grid,
    band: int,
    order: int,
    eps_list: Sequence[float],
    T: float,
    ensemble: EnsembleSpec,
    gauge: str = "parallel_transport",
    quantization: str = "symmetric",
    krylov_tol: float = 1e-10,
) -> SweepData:
    """Propagate every ensemble state under H^eps and the order-``order`` effective Hamiltonian.

    Initial molecular states are U^* psi0 with U = U0 (orders 0, 1) or
    U_(1) (order 2); the comparison at time T uses the same U^*.
    """
    start = time.perf_counter()
    args = [(model, grid, band, order, e, T, ensemble, gauge, quantization, krylov_tol) for e in eps_list]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda a: _one_eps(*a), args))
    errors = [r[0] for r in results]
    gaps = [r[1] for r in results]
    nd = max(r[2][0] for r in results)
    ed = max(r[2][1] for r in results)
    return SweepData(order, [float(e) for e in eps_list], grid.nodes, errors, gaps, nd, ed, time.perf_counter() - start)


# --------------------------------------------------------------------------
# reports

@dataclass
class ScalingReport:
    quantity: str
    order: int
    eps: list
    per_state: list
    sup: list
    fit: Optional[dict]
    status: str
    reason: str = ""
    refinement: Optional[dict] = None
    drifts: dict = field(default_factory=dict)
    wall: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def slope(self) -> Optional[float]:
        return None if self.fit is None or self.status == "inconclusive" else self.fit["slope"]

    @property
    def inconclusive(self) -> bool:
        return self.status == "inconclusive"

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "order": self.order,
            "eps": self.eps,
            "sup": self.sup,
            "per_state": self.per_state,
            "fit": self.fit,
            "slope": self.slope,
            "status": self.status,
            "reason": self.reason,
            "refinement": self.refinement,
            "drifts": self.drifts,
            "wall_clock_s": self.wall,
            "config": self.config,
        }

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        js = stem.with_name(stem.name + ".json")
        cs = stem.with_name(stem.name + ".csv")
        js.write_text(json.dumps(self.to_dict(), indent=2))
        with open(cs, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "state_index", "error"])
            for e, row in zip(self.eps, self.per_state):
                for i, v in enumerate(row):
                    w.writerow([f"{e:.17g}", i, f"{v:.17g}"])
        return js, cs


def _assess(quantity, order, eps, per_state, drifts=None, wall=0.0, config=None) -> ScalingReport:
    sup = [float(max(row)) for row in per_state]
    fit, status, reason = None, "ok", ""
    try:
        f = fit_slope(eps, sup)
        fit = f.to_dict()
        if f.r_squared < R2_MIN:
            status, reason = "inconclusive", f"R^2 = {f.r_squared:.4f} < {R2_MIN}"
    except DegenerateFit as exc:
        status, reason = "inconclusive", str(exc)
    drifts = drifts or {}
    if drifts.get("norm", 0.0) > NORM_DRIFT_MAX or drifts.get("energy", 0.0) > ENERGY_DRIFT_MAX:
        status = "inconclusive"
        reason = (reason + "; " if reason else "") + f"propagation drifts {drifts} exceed limits"
    return ScalingReport(quantity, order, list(eps), per_state, sup, fit, status, reason, None, drifts, wall, config or {})


def _refine(report: ScalingReport, fine: ScalingReport, nodes) -> ScalingReport:
    if report.fit is None or fine.fit is None:
        report.refinement = {"nodes": list(nodes), "slope": None, "stable": False}
        report.status = "inconclusive"
        return report
    delta = abs(fine.fit["slope"] - report.fit["slope"])
    stable = delta <= REFINEMENT_TOL
    report.refinement = {"nodes": list(nodes), "slope": fine.fit["slope"], "sup": fine.sup, "delta": delta, "stable": stable}
    if not stable:
        report.status = "inconclusive"
        report.reason = (report.reason + "; " if report.reason else "") + f"slope moved by {delta:.3f} under grid doubling"
    return report


def _sweep_for(config: ExperimentConfig, order: int, grid: Grid) -> SweepData:
    return run_sweep(
        config.build_model(), grid, config.bands[0], order, config.epsilons, config.T, config.ensemble,
        gauge=config.options.get("gauge", "parallel_transport"),
        quantization=config.options.get("quantization", "symmetric"),
        krylov_tol=float(config.tolerances.get("krylov", 1e-10)),
    )


def error_curve(
    config: ExperimentConfig,
    order: int,
    sweep: Optional[SweepData] = None,
    refined_sweep: Optional[SweepData] = None,
    check_refinement: Optional[bool] = None,
) -> ScalingReport:
    """Sup-over-ensemble error ||Psi(T) - U^* psi(T)|| versus eps, with slope fit.

    With refinement checking on, the sweep is repeated on a grid with twice
    the nodes per axis and the report is flagged inconclusive if the slope
    moves by more than 0.15.
    """
    sweep = sweep or _sweep_for(config, order, config.grid)
    drifts = {"norm": sweep.norm_drift, "energy": sweep.energy_drift}
    rep = _assess("error", order, sweep.eps, sweep.errors, drifts, sweep.wall, config.raw)
    if check_refinement is None:
        check_refinement = bool(config.output.get("refinement_check", True))
    if check_refinement:
        fine_grid = config.grid.refined()
        refined_sweep = refined_sweep or _sweep_for(config, order, fine_grid)
        fine = _assess("error", order, refined_sweep.eps, refined_sweep.errors)
        rep = _refine(rep, fine, fine_grid.nodes)
        rep.wall += refined_sweep.wall
    return rep


def density_gap(config: ExperimentConfig, order: int = 2, sweep: Optional[SweepData] = None) -> ScalingReport:
    """sup_x |rho_full(T, x) - |psi_eff(T, x)|^2| per eps (sup over the ensemble) and its slope."""
    sweep = sweep or _sweep_for(config, order, config.grid)
    drifts = {"norm": sweep.norm_drift, "energy": sweep.energy_drift}
    return _assess("density_gap", order, sweep.eps, sweep.density_gaps, drifts, sweep.wall, config.raw)


def defect_reports(config: ExperimentConfig) -> list[ScalingReport]:
    model = config.build_model()
    band = config.bands[0]
    idem, comm = projector_defect(model, config.grid, band, config.epsilons, config.ensemble)
    unit = unitarity_defect(model, config.grid, band, config.epsilons, config.ensemble)
    out = []
    for d in (idem, comm, unit):
        order = np.argsort(d.eps)[::-1]
        eps = [d.eps[i] for i in order]
        per = [d.per_state[i] for i in order]
        out.append(_assess(d.name, 1, eps, per, config=config.raw))
    return out


# --------------------------------------------------------------------------
# conical comparison

@dataclass
class ConicalComparison:
    eps: float
    C: float
    times: list
    radius: dict
    checks: dict
    zero_l: dict
    params: dict

    def to_dict(self) -> dict:
        return {"eps": self.eps, "C": self.C, "times": self.times, "mean_radius": self.radius,
                "checks": self.checks, "zero_angular_momentum": self.zero_l, "params": self.params}

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


CONICAL_VARIANTS = {"order1": ("A",), "phi_only": ("A", "phi"), "order2": ("A", "phi", "mass")}


def conical_correction_study(
    C: float = 1.0,
    eps: float = 0.05,
    grid: Optional[Grid] = None,
    r0: float = 2.0,
    width: float = 0.25,
    T: float = 1.0,
    quantization: str = "pmp",
    zero_l_tol: float = 1e-6,
    n_samples: int = 8,
) -> ConicalComparison:
    """Mean radius <|x|>(t) of identical packets under three effective Hamiltonians per band.

    The packet starts at (r0, 0) with tangential momentum sqrt(C r0), the
    circular-orbit speed on the upper cone. The checks require the mass term
    to push outward on the upper band and inward on the lower band relative
    to the phi-only run. A radial ring packet (zero angular momentum) that
    vanishes at the crossing probes how much of the mass term survives
    discretisation.
    """
    grid = grid or Grid.uniform(2, 5.0, 256, offset=True)
    model = conical_model(C)
    pts = grid.points()
    r = np.linalg.norm(pts, axis=-1)
    psi0 = gaussian_values(grid, [r0, 0.0], width, [0.0, np.sqrt(C * r0)], eps)[..., None]
    radius, times = {}, None
    final_r = {}
    for band, label in ((1, "upper"), (0, "lower")):
        for name, terms in CONICAL_VARIANTS.items():
            heff = build_effective(model, grid, band, 2, eps, gauge="analytic", quantization=quantization, terms=terms)
            traj = _radius_trajectory(heff, psi0, T, r, n_samples)
            times = traj[0]
            radius[f"{label}/{name}"] = traj[1]
            final_r[label, name] = traj[1][-1]
    checks = {
        "upper_mass_repulsive": final_r["upper", "order2"] >= final_r["upper", "phi_only"],
        "lower_mass_attractive": final_r["lower", "order2"] <= final_r["lower", "phi_only"],
    }
    # the factor 1 - exp(-|x|^4) keeps the probe smooth in x and zero at the crossing,
    # so it tests the ordering rather than the regularised 1/r^3 core of the mass tensor
    ring = np.exp(-((r - r0) ** 2) / (4 * width**2)) * -np.expm1(-(r**4))
    ring = (ring / norm(grid, ring))[..., None]
    heff = build_effective(model, grid, 1, 2, eps, gauge="analytic", quantization=quantization)
    acts = heff.term_actions(ring)
    m_norm, phi_norm = norm(grid, acts["mass"]), norm(grid, acts["born_huang"])
    ratio = m_norm / phi_norm
    checks["zero_l_mass_negligible"] = ratio <= zero_l_tol
    zero_l = {"mass_action": m_norm, "phi_action": phi_norm, "ratio": ratio, "tol": zero_l_tol}
    params = {"r0": r0, "width": width, "T": T, "quantization": quantization, "nodes": list(grid.nodes)}
    return ConicalComparison(eps, C, times, radius, checks, zero_l, params)


def _radius_trajectory(heff, psi0, T, r, n_samples):
    g = heff.grid
    times = [0.0]
    radii = [integrate(g, r * np.abs(psi0[..., 0]) ** 2)]
    y = psi0
    dt = T / n_samples
    for i in range(n_samples):
        y = propagate_effective(heff, y, dt, n_samples=1).final
        times.append((i + 1) * dt)
        radii.append(integrate(g, r * np.sum(np.abs(y) ** 2, axis=-1)))
    return times, radii


# --------------------------------------------------------------------------
# entry point

EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2


def run_experiment(path, log=print) -> int:
    """Run the study described by a JSON config; returns the process exit code."""
    try:
        config = load_config(path)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_ERROR
    stem = Path(config.output["path"])
    if not stem.is_absolute():
        stem = Path.cwd() / stem
    try:
        return _dispatch(config, stem, log)
    except BoaLabError as exc:
        log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_ERROR


def _dispatch(config: ExperimentConfig, stem: Path, log) -> int:
    inconclusive = False
    if config.study in ("error_curve", "density_gap"):
        for order in config.orders:
            sweep = _sweep_for(config, order, config.grid)
            if config.study == "error_curve":
                rep = error_curve(config, order, sweep=sweep)
            else:
                rep = density_gap(config, order, sweep=sweep)
            rep.config = config.raw
            js, _ = rep.write(stem.with_name(f"{stem.name}_{rep.quantity}_order{order}"))
            log(f"order {order}: {rep.quantity} slope={_fmt(rep.fit)} status={rep.status} -> {js}")
            inconclusive |= rep.inconclusive
    elif config.study == "defects":
        for rep in defect_reports(config):
            name = rep.quantity.replace("[", "_").replace("]", "").replace("+", "p")
            js, _ = rep.write(stem.with_name(f"{stem.name}_{name}"))
            log(f"{rep.quantity}: slope={_fmt(rep.fit)} status={rep.status} -> {js}")
            inconclusive |= rep.inconclusive
    elif config.study == "conical":
        res = conical_correction_study(
            C=float(config.model.get("C", 1.0)), eps=config.epsilons[0], grid=config.grid, T=config.T,
            quantization=config.options.get("quantization", "pmp"),
            r0=float(config.options.get("r0", 2.0)), width=float(config.options.get("width", 0.25)),
        )
        out = stem.with_name(stem.name + ".json")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(res.to_dict(), indent=2, default=float))
        log(f"conical checks {res.checks} -> {out}")
        inconclusive = not res.passed
    elif config.study == "adi_dia":
        from .oracles import adi_dia_residuals

        res = adi_dia_residuals(float(config.model.get("C", 1.0)), config.epsilons[0], config.grid)
        out = stem.with_name(stem.name + ".json")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(res, indent=2))
        log(f"adiabatic/diabatic residuals {res} -> {out}")
    return EXIT_INCONCLUSIVE if inconclusive else EXIT_OK


def _fmt(fit) -> str:
    return "n/a" if fit is None else f"{fit['slope']:.4f} (R^2 {fit['r_squared']:.4f})"
