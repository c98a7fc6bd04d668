import json

import numpy as np
import pytest

from spinbath.runner import (
    ChannelSpec,
    ConfigError,
    EngineSpec,
    ExperimentConfig,
    GeometrySpec,
    RunManifest,
    TimeSpec,
    digest,
    electron_r_bath,
    run,
    simulate,
)


def small_bulk(**kw):
    base = dict(
        name="tiny",
        scenario="bulk",
        n_configs=3,
        seed=5,
        geometry=GeometrySpec(bulk_radius=1.6, abundance=0.05),
        times=TimeSpec(1, 5000, 8),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def small_electrons(**kw):
    base = dict(
        name="tiny-e",
        scenario="static_electrons",
        n_configs=2,
        geometry=GeometrySpec(depth=5.0, electron_density=0.01, lateral_extent=30.0),
        engine=EngineSpec(r_bath=15.0),
        times=TimeSpec(0.1, 1000, 6),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize(
    "kw",
    [
        {"scenario": "nope"},
        {"method": "nope"},
        {"method": "pseudospin"},
        {"scenario": "hopping_electrons"},
        {"scenario": "relaxing_electrons", "method": "cce"},
        {"n_configs": 0},
        {"sequence": "udd"},
        {"sweep": {"geometry.colour": [1]}},
        {"sweep": {"geometry.depth": []}},
    ],
)
def test_validation(kw):
    with pytest.raises(ConfigError):
        small_bulk(**kw)


def test_yaml_roundtrip(tmp_path):
    cfg = small_bulk(sweep={"geometry.abundance": [0.02, 0.05]}, channels=ChannelSpec(T1=10.0))
    cfg.to_yaml(tmp_path / "c.yaml")
    back = ExperimentConfig.from_yaml(tmp_path / "c.yaml")
    assert back == cfg and back.hash() == cfg.hash()


def test_yaml_errors(tmp_path):
    (tmp_path / "a.yaml").write_text("colour: red\n")
    (tmp_path / "b.yaml").write_text("geometry: {colour: red}\n")
    (tmp_path / "c.yaml").write_text("geometry: [unclosed\n")
    for name in ("a", "b", "c"):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml(tmp_path / f"{name}.yaml")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(tmp_path / "missing.yaml")


def test_cells_expand_grid():
    cfg = small_bulk(sweep={"geometry.abundance": [0.02, 0.05], "engine.order": [1, 2]})
    cells = cfg.cells()
    assert [c[0] for c in cells] == ["cell000", "cell001", "cell002", "cell003"]
    assert cells[3][1] == {"geometry.abundance": 0.05, "engine.order": 2}
    assert cells[3][2].geometry.abundance == 0.05 and cells[3][2].sweep == {}


def test_electron_r_bath():
    assert electron_r_bath(5, 0.05) == 25.0
    assert electron_r_bath(20, 0.05) == 50.0
    assert electron_r_bath(5, 0.001) == pytest.approx(4 / np.sqrt(0.001))


def test_simulate_is_deterministic():
    cfg = small_bulk()
    a, b = simulate(cfg, 1), simulate(cfg, 1)
    assert np.array_equal(a.values, b.values)
    assert a.metadata["config_index"] == 1


def test_electron_stream_shares_c13_bath():
    # the 13C bath of an electron scenario equals the nuclear-surface one for the same index
    g = GeometrySpec(depth=3.0, bulk_radius=1.6, abundance=0.05, surface_half_extent=0.0)
    nuc = simulate(ExperimentConfig(scenario="nuclear_surface", seed=2, geometry=g, times=TimeSpec(1, 5000, 6)), 0)
    g_e = GeometrySpec(depth=3.0, bulk_radius=1.6, abundance=0.05, include_c13=True, electron_density=1e-6, lateral_extent=5.0)
    both = simulate(ExperimentConfig(scenario="static_electrons", seed=2, geometry=g_e, times=TimeSpec(1, 5000, 6)), 0)
    assert both.metadata["n_electrons"] == 0
    assert np.allclose(both.values, nuc.values)


def test_run_outputs_and_resume(tmp_path):
    cfg = small_bulk(sweep={"geometry.abundance": [0.05, 0.1]})
    res = run(cfg, tmp_path)
    assert len(res) == 2 and all(len(r.curves) == 3 and not r.failed for r in res)
    for name in ("config.yaml", "summary.csv", "manifest.json", "cell001/mean.csv", "cell001/fits.csv"):
        assert (tmp_path / name).exists()
    agg = json.loads((tmp_path / "cell000" / "aggregate.json").read_text())
    assert agg["n_configs"] + agg["n_failed"] == 3
    before = digest(tmp_path)
    manifest = RunManifest.load(tmp_path / "manifest.json")
    assert manifest.pending() == [] and len(manifest.tasks) == 6

    # drop one curve and resume: only that task reruns and the outputs are identical
    (tmp_path / "cell001" / "curves" / "config_0002.csv").unlink()
    run(cfg, tmp_path, resume=True)
    assert digest(tmp_path) == before


def test_workers_do_not_change_results(tmp_path):
    cfg = small_bulk()
    run(cfg, tmp_path / "one", workers=1)
    run(cfg, tmp_path / "two", workers=2)
    assert digest(tmp_path / "one") == digest(tmp_path / "two")


def test_failed_tasks_are_recorded(tmp_path):
    # a negative abundance fails inside each task
    cfg = small_bulk(geometry=GeometrySpec(bulk_radius=1.6, abundance=-0.5), n_configs=2)
    res = run(cfg, tmp_path)
    assert res[0].failed == [0, 1] and res[0].mean is None
    manifest = RunManifest.load(tmp_path / "manifest.json")
    assert all(t["status"] == "failed" and t["error"] for t in manifest.tasks.values())


def test_static_electrons_run():
    curve = simulate(small_electrons(), 0)
    assert curve.metadata["n_electrons"] > 0
    assert np.all(np.abs(curve.values) <= 1 + 1e-12)


def test_scenario_requirements():
    with pytest.raises(ConfigError):
        simulate(small_electrons(geometry=GeometrySpec(electron_density=0.01)), 0)
    with pytest.raises(ConfigError):
        simulate(ExperimentConfig(scenario="nuclear_surface"), 0)
