import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boalab.discretization import Grid
from boalab.ensembles import EnsembleSpec
from boalab.errors import ConfigError, DegenerateFit
from boalab.fitting import fit_slope
from boalab.model_zoo import constant_model, make_avoided_crossing_1d
from boalab.scaling_lab import (
    EXIT_ERROR,
    ScalingReport,
    _assess,
    _refine,
    load_config,
    run_experiment,
    run_sweep,
)

EPS = [0.2, 0.1, 0.05, 0.025]


def base_config(tmp_path, **over):
    cfg = {
        "study": "error_curve",
        "model": {"name": "avoided_crossing", "delta": 0.5},
        "grid": {"extents": [[-8.0, 8.0]], "nodes": [256]},
        "bands": [0],
        "orders": [0],
        "epsilons": EPS,
        "time": {"T": 0.25},
        "ensemble": {"n_states": 8, "seed": 0},
        "output": {"path": str(tmp_path / "out" / "run"), "refinement_check": False},
    }
    cfg.update(over)
    return cfg


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


def test_fit_exact_power_laws():
    eps = np.array(EPS)
    f = fit_slope(eps, eps**2)
    assert f.slope == pytest.approx(2.0, abs=1e-12) and f.r_squared == pytest.approx(1.0)
    f = fit_slope(eps, 3 * eps)
    assert f.slope == pytest.approx(1.0, abs=1e-12)
    assert f.intercept == pytest.approx(np.log(3.0))


def test_fit_noisy_power_law():
    rng = np.random.default_rng(0)
    eps = np.geomspace(0.2, 0.0125, 8)
    err = eps**1.5 * np.exp(rng.normal(scale=0.05, size=eps.size))
    f = fit_slope(eps, err)
    assert abs(f.slope - 1.5) < 0.1
    assert f.ci_low <= f.slope <= f.ci_high


@settings(max_examples=30, deadline=None)
@given(p=st.floats(0.2, 4.0), c=st.floats(1e-3, 1e3))
def test_fit_recovers_any_exponent(p, c):
    eps = np.array(EPS)
    assert fit_slope(eps, c * eps**p).slope == pytest.approx(p, abs=1e-9)


def test_fit_degenerate():
    with pytest.raises(DegenerateFit):
        fit_slope([0.1, 0.05], [1e-2, 2.5e-3])
    with pytest.raises(DegenerateFit):
        fit_slope(EPS, [1e-2, 0.0, 1e-3, 1e-4])


def test_assess_flags_poor_fit_and_drift():
    rows = [[1.0], [0.1], [1.0], [0.1]]
    assert _assess("e", 1, EPS, rows).inconclusive
    good = [[e**2] for e in EPS]
    assert not _assess("e", 1, EPS, good).inconclusive
    assert _assess("e", 1, EPS, good, drifts={"norm": 1e-6}).inconclusive


def test_refine_tolerance():
    coarse = _assess("e", 1, EPS, [[e] for e in EPS])
    fine_ok = _assess("e", 1, EPS, [[e**1.1] for e in EPS])
    fine_bad = _assess("e", 1, EPS, [[e**1.3] for e in EPS])
    assert not _refine(coarse, fine_ok, (2048,)).inconclusive
    coarse = _assess("e", 1, EPS, [[e] for e in EPS])
    assert _refine(coarse, fine_bad, (2048,)).inconclusive


def test_report_files(tmp_path):
    rep = _assess("sup_error", 1, EPS, [[e, 0.5 * e] for e in EPS])
    js, cs = rep.write(tmp_path / "r")
    data = json.loads(js.read_text())
    assert data["slope"] == pytest.approx(1.0)
    rows = list(csv.reader(cs.open()))
    assert rows[0] == ["eps", "state_index", "error"]
    assert len(rows) == 1 + 8
    assert float(rows[1][0]) == 0.2 and float(rows[1][2]) == 0.2
    assert len(rows[2][2].replace(".", "").lstrip("0")) <= 17


@pytest.mark.parametrize(
    "change, field",
    [
        ({"epsilons": [0.025, 0.05, 0.1, 0.2]}, "epsilons"),
        ({"epsilons": [0.2, 0.1, 0.05]}, "epsilons"),
        ({"epsilons": [0.2, 0.19, 0.18, 0.17]}, "epsilons"),
        ({"ensemble": {"n_states": 4}}, "n_states"),
        ({"study": "nonsense"}, "study"),
        ({"orders": [3]}, "orders"),
        ({"grid": {"extents": [[-8.0, 8.0]], "nodes": [100]}}, "grid"),
        ({"extra": 1}, "extra"),
    ],
)
def test_config_errors(tmp_path, change, field):
    p = write(tmp_path, base_config(tmp_path, **change))
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert field in str(info.value.field)
    assert run_experiment(p, log=lambda *_: None) == EXIT_ERROR


def test_config_error_reports_line(tmp_path):
    p = write(tmp_path, base_config(tmp_path, epsilons=[0.025, 0.05, 0.1, 0.2]))
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert info.value.line == next(i for i, l in enumerate(p.read_text().splitlines(), 1) if '"epsilons"' in l)
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "study": "error_curve",\n  oops\n}')
    with pytest.raises(ConfigError) as info:
        load_config(bad)
    assert info.value.line == 3


def test_sweep_deterministic_and_thread_independent(monkeypatch):
    g = Grid.uniform(1, 8.0, 256)
    m = make_avoided_crossing_1d(0.5)
    ens = EnsembleSpec(n_states=8)
    monkeypatch.setenv("BOA_LAB_THREADS", "1")
    a = run_sweep(m, g, 0, 1, EPS, 0.25, ens)
    monkeypatch.setenv("BOA_LAB_THREADS", "4")
    b = run_sweep(m, g, 0, 1, EPS, 0.25, ens)
    assert a.errors == b.errors and a.density_gaps == b.density_gaps


def test_constant_model_sweep_is_exact():
    g = Grid.uniform(1, 8.0, 256)
    s = run_sweep(constant_model(), g, 0, 2, EPS, 0.5, EnsembleSpec(n_states=8), krylov_tol=1e-12)
    assert max(max(r) for r in s.density_gaps) < 1e-10


def test_run_experiment_writes_outputs(tmp_path):
    p = write(tmp_path, base_config(tmp_path))
    code = run_experiment(p, log=lambda *_: None)
    assert code in (0, 2)
    js = tmp_path / "out" / "run_error_order0.json"
    data = json.loads(js.read_text())
    assert data["config"]["grid"]["nodes"] == [256]
    assert len(data["per_state"]) == 4 and all(len(r) == 8 for r in data["per_state"])
    first = js.read_text()
    run_experiment(p, log=lambda *_: None)
    again = json.loads(js.read_text())
    assert again["sup"] == json.loads(first)["sup"]
