import json

import numpy as np
import pytest

from relaxcycle import cli
from relaxcycle.experiments import (Orbit, SWEEP_COLUMNS, THREADS_ENV, simulate, worker_count,
                                    classify_by_simulation, slope)
from relaxcycle.compactify import ChartId
from relaxcycle.model import Params, m


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


def test_simulate_writes_outputs_and_round_trips(tmp_path):
    assert run(tmp_path, "simulate", "--t-end", "60") == 0
    text = (tmp_path / "simulate.csv").read_text()
    assert text.splitlines()[0] == "t,chart,c1,c2,c3,x,y,z"
    orb = Orbit.from_csv(text)
    assert Orbit.from_csv(orb.to_csv()).to_csv() == text
    ref = simulate(Params(0.8, 0.5, 1e-2), (0.1, 0.1, 0.1), 60.0)
    np.testing.assert_array_equal(orb.t, ref.t)
    np.testing.assert_array_equal(orb.affine, ref.affine)
    assert (tmp_path / "simulate.svg").read_text().startswith("<?xml")
    d = json.loads((tmp_path / "simulate.json").read_text())
    assert len(d["t"]) == len(orb.t)


def test_simulate_shows_relaxation_shape():
    orb = simulate(Params(0.8, 0.5, 1e-2), (0.1, 0.1, 0.1), 100.0)
    late = orb.t > 40
    # resample uniformly in time: the solver clusters samples in the spikes
    t = np.linspace(40.0, 100.0, 6001)
    z = np.interp(t, orb.t[late], orb.affine[late, 2])
    dz = np.abs(np.gradient(z, t))
    # plateaus: z drifts slowly most of the time; spikes: brief excursions far above
    assert np.mean(dz < 0.5) > 0.8
    assert np.mean(z > 0) < 0.1
    assert z.max() - np.median(z) > 4.0


def test_simulate_eps_zero_uses_reduced_flow(tmp_path):
    assert run(tmp_path, "simulate", "--eps", "0", "--t-end", "5", "--no-plot") == 0
    orb = Orbit.from_csv((tmp_path / "simulate.csv").read_text())
    p = Params(0.8, 0.5)
    np.testing.assert_allclose(orb.affine[:, 0], m(orb.affine[:, 1], orb.affine[:, 2], p), atol=1e-12)
    assert set(orb.chart) == {ChartId.AFFINE}


def test_format_selection(tmp_path):
    assert run(tmp_path, "simulate", "--t-end", "2", "--format", "json") == 0
    assert sorted(f.name for f in tmp_path.iterdir()) == ["simulate.json"]
    assert run(tmp_path / "b", "simulate", "--t-end", "2", "--format", "csv,svg") == 0
    assert sorted(f.name for f in (tmp_path / "b").iterdir()) == ["simulate.csv", "simulate.svg"]


def test_outputs_are_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run(tmp_path / d, "simulate", "--t-end", "20") == 0
    for name in ("simulate.csv", "simulate.json", "simulate.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_limit_cycle_command(tmp_path):
    assert run(tmp_path, "limit-cycle") == 0
    d = json.loads((tmp_path / "limit_cycle.json").read_text())
    assert d["converged"] and d["contraction"] < 1
    orb = Orbit.from_csv((tmp_path / "limit_cycle.csv").read_text())
    assert orb.affine[:, 2].min() == pytest.approx(d["min_z"], abs=1e-2)
    assert (tmp_path / "limit_cycle.svg").exists()


def test_verify_atlas_command(tmp_path):
    assert run(tmp_path, "verify-atlas", "--points", "30", "--diagram-points", "50") == 0
    rep = json.loads((tmp_path / "verify_atlas.json").read_text())
    assert rep["passed"]
    facs = [c for c in rep["checks"] if c["name"].startswith("collinearity:") and "factor" in c]
    assert facs and all(c["factor_ratio_min"] > 0 for c in facs)


def test_bifurcation_records_every_grid_point(tmp_path):
    code = run(tmp_path, "bifurcation", "--alpha-grid", "0.3,0.7", "--eps-list", "1e-2", "--no-plot")
    assert code == 0
    lines = (tmp_path / "bifurcation.csv").read_text().splitlines()
    assert lines[0].split(",") == SWEEP_COLUMNS
    status = {float(r.split(",")[0]): r.split(",")[3] for r in lines[1:]}
    assert status == {0.3: "equilibrium", 0.7: "cycle"}


def test_convergence_command_alpha_above_one(tmp_path):
    code = run(tmp_path, "convergence", "--alpha", "1.2", "--eps-list", "1e-3", "--no-plot")
    assert code == 0
    d = json.loads((tmp_path / "convergence.json").read_text())
    assert len(d["rows"]) == 1 and d["rows"][0]["eps"] == 1e-3
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert len(lines) == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"t_end": 3.0, "eps": 0.02, "format": "json"}))
    assert run(tmp_path / "o", "simulate", "--config", str(cfg), "--eps", "0.01") == 0
    d = json.loads((tmp_path / "o" / "simulate.json").read_text())
    assert d["t_end"] == 3.0 and d["eps"] == 0.01


@pytest.mark.parametrize("args", [
    ["limit-cycle", "--alpha", "0.4"],
    ["simulate", "--eps", "-1"],
    ["bifurcation", "--eps-list", "0"],
    ["simulate", "--format", "png"],
    ["nonsense"],
])
def test_config_errors_exit_2(tmp_path, args):
    assert run(tmp_path, *args) == 2


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run(tmp_path, "simulate", "--config", str(cfg)) == 2
    cfg.write_text("{not json")
    assert run(tmp_path, "simulate", "--config", str(cfg)) == 2


def test_numeric_failure_exit_1(tmp_path, capsys):
    # at alpha = 1.2 and eps = 1e-2 the return leaves the default Sigma1 window
    assert run(tmp_path, "limit-cycle", "--alpha", "1.2", "--no-plot") == 1
    assert "SectionWindowError" in capsys.readouterr().err


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert run(tmp_path, "simulate", "--t-end", "1") == 2
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(ValueError):
        worker_count()


def test_classification_and_slope_helpers():
    assert classify_by_simulation(Params(0.3, 0.5, 1e-2), t_end=200)[0] == "equilibrium"
    assert slope([0, 1, 2, 3], [1, 3, 5, 7], 0, 3) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        slope([0, 1], [1, 2], 5, 6)
