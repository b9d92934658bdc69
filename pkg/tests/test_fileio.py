import numpy as np
import pytest
import yaml

from wavepinn import wave_theory as wt
from wavepinn.fileio import (Grid, RunConfig, export_field_table, extract_buoys, extract_snapshots,
                             import_field_table, infer_kind, load_field, load_run_config, read_observations,
                             save_field, synth, write_observations)
from wavepinn.metrics import GridField
from wavepinn.physics import ConfigError

SEA = wt.SeaStateSpec.from_frequencies([4.5, 6.3], [0.01, 0.015], [0.3, -1.0], depth=0.7)
GRID = Grid(0.0, 6.0, 0.1, 0.0, 4.0, 0.05)


def test_field_roundtrip_binary_and_table(tmp_path):
    f = synth(SEA, GRID, z_slices=(-0.35,), surface_potential=True)
    assert set(f) == {"elevation", "potential_z-0.35", "surface_potential"}
    for name, field in f.items():
        save_field(tmp_path / f"{name}.field", field, "test")
        back = load_field(tmp_path / f"{name}.field")
        assert np.array_equal(back.values, field.values) and back.same_grid(field)
        assert back.quantity == field.quantity
    assert load_field(tmp_path / "potential_z-0.35.field").meta["z"] == -0.35
    export_field_table(tmp_path / "e.csv", f["elevation"])
    back = import_field_table(tmp_path / "e.csv")
    assert np.allclose(back.values, f["elevation"].values, atol=0, rtol=0)
    assert back.same_grid(f["elevation"])


def test_field_file_layout(tmp_path):
    g = GridField(np.arange(6.0).reshape(2, 3), 0.0, 1.0, 0.0, 0.5)
    save_field(tmp_path / "a.field", g)
    raw = (tmp_path / "a.field").read_bytes()
    payload = raw[raw.index(b"\n") + 1:]
    assert np.array_equal(np.frombuffer(payload, "<f8"), np.arange(6.0))


def test_corrupt_field_files(tmp_path):
    p = tmp_path / "bad.field"
    p.write_bytes(b'{"format":"wavepinn-field","nx":3,"nt":2,"x0":0,"dx":1,"t0":0,"dt":1}\n' + b"\0" * 8)
    with pytest.raises(ConfigError):
        load_field(p)
    p.write_bytes(b"no header")
    with pytest.raises(ConfigError):
        load_field(p)
    p.write_bytes(b'{"format":"other"}\n')
    with pytest.raises(ConfigError):
        load_field(p)


def test_synth_values_and_nyquist_flag():
    f = synth(SEA, GRID)["elevation"]
    X, T = f.mesh()
    assert np.allclose(f.values, wt.lwt_elevation(SEA, X, T))
    assert f.meta["nyquist_ok"]
    coarse = synth(SEA, Grid(0, 6, 1.0, 0, 4, 0.05))["elevation"]
    assert not coarse.meta["nyquist_ok"]


def test_extract_buoys_and_snapshots(tmp_path):
    f = synth(SEA, GRID)["elevation"]
    b = extract_buoys(f, [0.0, 3.02, 6.0])
    assert b.kind == "buoys" and b.positions == pytest.approx((0.0, 3.0, 6.0))
    assert b.n == 3 * f.nt
    assert np.allclose(b.eta, wt.lwt_elevation(SEA, b.x, b.t))
    s = extract_snapshots(f, [0.0, 1.0], x_range=(1.0, 2.0))
    assert s.n == 2 * 11 and s.x.min() == pytest.approx(1.0)
    with pytest.raises(wt.DomainError):
        extract_buoys(f, [9.0])
    with pytest.raises(wt.DomainError):
        extract_snapshots(f, [1.0], x_range=(7.0, 8.0))
    write_observations(tmp_path / "o.csv", b)
    back = read_observations(tmp_path / "o.csv")
    assert back.kind == "buoys" and np.array_equal(back.eta, b.eta)
    assert infer_kind(s.x, s.t) == "snapshots"
    assert infer_kind(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 0.5])) == "scattered"
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        read_observations(tmp_path / "bad.csv")


def config_doc(**over):
    doc = {"scenario": "assimilation", "seed": 1,
           "sea": {"depth": 0.7, "components": [{"amplitude": 0.01, "omega": 4.5, "phase": 0.3},
                                                {"amplitude": 0.015, "period": 2 * np.pi / 6.3}]},
           "domain": {"x": [0, 6], "t": [0, 4]},
           "observations": {"kind": "buoys", "positions": [0, 3, 6], "dt": 0.1},
           "model": {"hidden_layers": 1, "width": 8, "n_freq": 2},
           "training": {"adam_epochs": 3, "lbfgs_epochs": 2},
           "collocation": {"n_surface": 20, "n_bottom": 5, "n_laplace": 30},
           "constraint": {"adam_epochs": 50, "polish_iters": 10, "n_dense": 50, "m_tol": 10.0, "r_tol": 1.0},
           "evaluation": {"dx": 0.5, "dt": 0.5}}
    doc.update(over)
    return doc


def test_run_config_from_yaml(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(config_doc()))
    cfg = load_run_config(p)
    spec = cfg.sea.build()
    assert np.allclose(spec.omegas, [4.5, 6.3])
    tc = cfg.train_config()
    assert tc.adam_epochs == 3 and tc.model.width == 8 and tc.seed == 1


@pytest.mark.parametrize("over", [
    {"bogus": 1},
    {"sea": {"depth": 0.7}},
    {"sea": {"reference_rows": [5]}},
    {"sea": {"components": [{"amplitude": 1.0, "omega": 1.0, "period": 1.0}]}},
    {"model": {"depth": 3}},
    {"scenario": "prediction"},
    {"training": {"coupling": "mixed"}},
    {"collocation": "many"},
])
def test_run_config_errors(over):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(config_doc(**over))


def test_region_config_from_spectrum():
    doc = config_doc(scenario="prediction",
                     segments={"n_segments": 3, "epochs_per_segment": 1, "t_first": 1.0, "t_end": 4.0,
                               "refine_epochs": 1, "total_epochs": 5},
                     region={"peak_period": 1.2, "gamma": 3.0, "x_offset_left": -1.5, "x_extent_right": 4.0})
    cfg = RunConfig.from_dict(doc)
    r = cfg.region.build(4.0, 0.0, cfg.sea.depth)
    assert r.cg_high == pytest.approx(1.58, rel=0.01) and r.cg_low == pytest.approx(0.51, rel=0.01)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_run_config("/nonexistent/run.yaml")
