import json

import pytest

from spinbath.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from spinbath.runner import ExperimentConfig, GeometrySpec, TimeSpec


@pytest.fixture
def config_file(tmp_path):
    cfg = ExperimentConfig(
        name="cli",
        n_configs=2,
        seed=1,
        geometry=GeometrySpec(bulk_radius=1.6, abundance=0.05),
        times=TimeSpec(1, 5000, 8),
    )
    path = tmp_path / "cfg.yaml"
    cfg.to_yaml(path)
    return path


def test_run_fit_inspect(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config_file), "--out", str(out), "--workers", "1"]) == EXIT_OK
    assert "cell000" in capsys.readouterr().out
    assert main(["run", "--config", str(config_file), "--out", str(out), "--workers", "1", "--resume"]) == EXIT_OK
    assert main(["fit", str(out / "cell000" / "curves"), "--out", str(tmp_path / "fits")]) == EXIT_OK
    assert (tmp_path / "fits" / "fits.csv").exists()
    capsys.readouterr()
    assert main(["inspect", str(out)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["tasks"] == {"done": 2}


def test_generate(tmp_path, config_file):
    assert main(["generate", "--config", str(config_file), "--out", str(tmp_path / "g")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "g" / "cell000").iterdir()) == ["bath_0000.txt", "bath_0001.txt"]


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: nowhere\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["reproduce", "no-such-recipe", "--out", str(tmp_path / "y")]) == EXIT_CONFIG
    assert main(["inspect", str(tmp_path / "empty")]) == EXIT_CONFIG
    assert main(["fit", str(tmp_path / "nothing")]) == EXIT_CONFIG


def test_numerical_exit_codes(tmp_path):
    cfg = ExperimentConfig(n_configs=1, geometry=GeometrySpec(bulk_radius=1.6, abundance=-1.0), times=TimeSpec(1, 10, 4))
    path = tmp_path / "neg.yaml"
    cfg.to_yaml(path)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "r"), "--workers", "1"]) == EXIT_NUMERICAL
    flat = tmp_path / "flat.csv"
    flat.write_text("t_us,re_L,im_L\n" + "".join(f"{t},1.0,0.0\n" for t in range(1, 20)))
    assert main(["fit", str(flat), "--out", str(tmp_path / "f")]) == EXIT_NUMERICAL


def test_reproduce_pass_and_fail(tmp_path, monkeypatch, capsys):
    from spinbath import recipes

    def fake(passed):
        def recipe(ctx, report):
            report.add(1, "dummy", 1.0, "1", passed)

        return recipe

    monkeypatch.setitem(recipes.RECIPES, "fake-pass", fake(True))
    monkeypatch.setitem(recipes.RECIPES, "fake-fail", fake(False))
    assert main(["reproduce", "fake-pass", "--out", str(tmp_path / "a"), "--scale", "quick"]) == EXIT_OK
    assert main(["reproduce", "fake-fail", "--out", str(tmp_path / "b"), "--scale", "quick"]) == EXIT_ACCEPTANCE
    assert "FAIL" in capsys.readouterr().out
