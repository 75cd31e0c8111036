from __future__ import annotations

import csv
import io
import json

import pytest

from multising import cli, config

CYCLE_MODEL_TOML = """
flow = "cycle-model"
seed = 3

[cover]
grid = [12, 4, 4]
eps = 0.05
t_max = 5.0
samples_per_box = 2
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _run(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_region():
    assert config.parse_region("-25:25,-30:30,0:55") == [[-25.0, 25.0], [-30.0, 30.0], [0.0, 55.0]]
    with pytest.raises(ValueError):
        config.parse_region("1,2")


def test_toml_tables_map_to_fields(tmp_path):
    cfg, problems = config.load(_write(tmp_path, CYCLE_MODEL_TOML + "\n[horizons]\nhorizon = 30.0\n"))
    assert problems == []
    assert cfg.flow == "cycle-model" and cfg.seed == 3
    assert cfg.grid == [12, 4, 4] and cfg.horizon == 30.0


def test_unknown_keys_are_reported(tmp_path):
    _, problems = config.load(_write(tmp_path, 'flow = "lorenz"\ncolour = 1\n[cover]\nsize = 2\n'))
    assert problems == ["colour: unknown key", "cover.size: unknown key"]


def test_validate_valid_config_is_clean(tmp_path):
    cfg, problems = config.load(_write(tmp_path, CYCLE_MODEL_TOML))
    assert problems + config.validate(cfg) == []


def test_validate_reports_field_paths():
    cfg = config.AnalysisConfig(flow="limit-cycle", eps=-0.1, region=[[-5.0, 5.0], [-1.0, 1.0]])
    problems = config.validate(cfg)
    assert "cover.eps: ε must be positive" in problems
    assert any(p.startswith("region: outside the domain of limit-cycle") for p in problems)


@pytest.mark.parametrize("cfg, expected", [
    (config.AnalysisConfig(flow="nope"), "flow: unknown flow 'nope'"),
    (config.AnalysisConfig(flow="lorenz", preset="x"), "preset: unknown preset 'x' for lorenz"),
    (config.AnalysisConfig(flow="lorenz", grid=[4, 4]), "cover.grid: must be a positive integer or 3 positive integers"),
    (config.AnalysisConfig(flow="lorenz", region=[[1.0, 0.0]] * 3), "region: every interval needs lo < hi"),
    (config.AnalysisConfig(flow="lorenz", seed=-1), "seed: must be a non-negative integer"),
    (config.AnalysisConfig(flow="lorenz", tol=0.0), "tolerances.tol: must be positive"),
])
def test_validate_single_problems(cfg, expected):
    assert expected in config.validate(cfg)


def test_validate_command_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, CYCLE_MODEL_TOML, "good.toml")
    code, out, _ = _run(capsys, ["validate", str(good)])
    assert code == cli.EXIT_PASS
    assert json.loads(out)["diagnostics"] == []
    bad = _write(tmp_path, CYCLE_MODEL_TOML.replace("eps = 0.05", "eps = 0.0"), "bad.toml")
    code, out, _ = _run(capsys, ["validate", str(bad)])
    assert code == cli.EXIT_CONFIG
    assert "cover.eps: ε must be positive" in json.loads(out)["diagnostics"]
    broken = _write(tmp_path, "flow = [", "broken.toml")
    assert _run(capsys, ["validate", str(broken)])[0] == cli.EXIT_CONFIG


def test_run_with_bad_region_is_config_error(capsys):
    code, out, err = _run(capsys, ["recur", "--flow", "double-well", "--region", "-9:9,-1:1"])
    assert code == cli.EXIT_CONFIG
    assert out == ""
    assert "region: outside the domain" in err


def test_region_flag_accepts_negative_values(capsys):
    code, out, _ = _run(capsys, ["classify", "--flow", "limit-cycle", "--region", "-2:2,-2:2"])
    assert code == cli.EXIT_PASS
    report = json.loads(out)
    assert report["config"]["region"] == [[-2.0, 2.0], [-2.0, 2.0]]


def test_verify_cycle_model(tmp_path, capsys):
    code, out, _ = _run(capsys, ["verify", "--config", str(_write(tmp_path, CYCLE_MODEL_TOML)),
                                 "--out", str(tmp_path / "out")])
    report = json.loads(out)
    assert code == cli.EXIT_PASS
    assert report["results"]["verdict"] == "multisingular, S_E={sigma1}, S_F={sigma0}"
    assert report["schema_version"] == cli.SCHEMA_VERSION
    assert (tmp_path / "out" / "report.json").read_text() == out
    rows = list(csv.reader(open(tmp_path / "out" / "rates.csv")))
    assert rows[0][:2] == ["anchor", "owner"]
    assert len(rows) - 1 == report["results"]["splitting"]["n_anchors"]


def test_reports_are_deterministic(tmp_path, capsys):
    argv = ["verify", "--config", str(_write(tmp_path, CYCLE_MODEL_TOML))]
    first = _run(capsys, argv)[1]
    second = _run(capsys, argv)[1]
    assert first.encode() == second.encode()


def test_recur_double_well(tmp_path, capsys):
    code, out, _ = _run(capsys, ["recur", "--flow", "double-well", "--out", str(tmp_path), "--format", "csv"])
    assert code == cli.EXIT_PASS
    rows = dict(list(csv.reader(io.StringIO(out)))[1:])
    assert rows["results.n_classes"] == "3"
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "chain_graph.txt").exists()
    assert (tmp_path / "class_levels.csv").exists()


def test_render_cleans_non_finite_values():
    text = cli.render({"a": float("inf"), "b": [1.0, float("nan")]}, "json")
    assert json.loads(text) == {"a": "inf", "b": [1.0, "nan"]}
    assert cli.render({"a": {"b": 1}}, "csv") == "key,value\na.b,1\n"
