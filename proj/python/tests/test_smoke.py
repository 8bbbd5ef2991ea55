import json

import numpy as np
import pytest

import graphdyn as gd


def test_expr_complexity_and_evaluate():
    e = gd.Expr("-0.5*x_i0 + 1")
    assert e.complexity() == 2
    assert e.evaluate(2.0) == pytest.approx(0.0)
    g = gd.Expr("sin(x_j0 - x_i0)")
    assert g.evaluate(0.0, np.pi / 2) == pytest.approx(1.0)
    with pytest.raises(gd.Error):
        gd.Expr("sin(")


def test_graphs_are_seeded():
    a = gd.ba_graph(20, 2, seed=3)
    assert a.shape == (20, 20)
    assert np.array_equal(a, a.T)
    assert np.array_equal(a, gd.ba_graph(20, 2, seed=3))
    assert gd.ws_graph(12, 4, 0.1, seed=1).sum() == 12 * 4
    assert gd.er_graph(10, 0.0, seed=1).sum() == 0


def test_simulate_matches_symbolic_rollout():
    a = gd.ba_graph(15, 2, seed=1)
    x0 = np.linspace(0.1, 0.9, 15)
    t, x = gd.simulate("bio", a, x0, 0.0, 1.0, 50)
    assert x.shape == (50, 15)
    r = gd.rollout("1 - 0.5*x_i0", "-0.5*x_i0*x_j0", a, x0, 0.0, 1.0, 50)
    assert not r["diverged"]
    assert gd.mae_traj(t, x, r["states"]) < 1e-6


def test_stencil_on_polynomial():
    t = np.linspace(0.0, 1.0, 21)
    x = (t**3)[:, None]
    td, d = gd.stencil(t, x)
    assert len(td) == 17
    assert np.allclose(d[:, 0], 3 * td**2, atol=1e-10)


def test_pipeline_stage(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "experiment": "py",
        "dynamics": {"kind": "epid"},
        "graphs": {"train": {"n": 8, "m": 2}, "val": {"n": 8, "m": 2}, "test": [{"n": 8, "m": 2}]},
        "data": {"samples": 40},
    }))
    with pytest.raises(gd.StageDependencyError):
        gd.run_stage("train", str(cfg), out=str(tmp_path / "out"))
    r = gd.run_stage("generate", str(cfg), out=str(tmp_path / "out"))
    assert r["config_hash"] == gd.config_hash(str(cfg))
    assert "data/train/states.csv" in r["files"]
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": -1}')
    with pytest.raises(gd.ConfigError):
        gd.config_hash(str(bad))
