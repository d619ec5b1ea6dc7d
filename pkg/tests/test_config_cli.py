import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from selfreg.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from selfreg.config import DEFAULTS, config_hash, parse_config, reference_config_text
from selfreg.errors import ConfigError
from selfreg.output import SCHEMA_VERSION, read_csv

MINIMAL = "geography: {side: 1}\nmodel: {M: 1}\n"


def write_config(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def violations(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.violations


def test_minimal_config_fills_defaults_and_hash_is_stable():
    a, b = parse_config(MINIMAL), parse_config(MINIMAL)
    assert a.hash == b.hash and len(a.hash) == 16
    assert a.geo.n_sites == 1 and a.params.M == 1
    assert a.replicates == DEFAULTS["replicates"]
    assert a.engine["scheme"] == "full_truncation"
    # key order and formatting do not matter
    assert parse_config("model: {M: 1}\ngeography:\n  side: 1\n").hash == a.hash
    assert parse_config(MINIMAL + "seed: 5\n").hash != a.hash


def test_thread_budget_and_output_dir_do_not_change_the_hash():
    base = parse_config(MINIMAL)
    assert parse_config(MINIMAL + "threads: 4\noutput_dir: /tmp/x\n").hash == base.hash
    assert base.with_overrides(threads=3).hash == base.hash
    assert base.with_overrides(seed=7).hash != base.hash
    assert config_hash({"a": 1, "b": [1.0, 2]}) == config_hash({"b": [1.0, 2], "a": 1})


def test_lambda_shape_error_names_the_key():
    errs = violations("model: {M: 2, lambda: [[1.0, 2.0, 3.0]]}\n")
    assert any(e.startswith("model.lambda:") and "shape" in e for e in errs)


def test_R_equal_two_is_rejected():
    errs = violations("geography: {R: 2.0}\n")
    assert any(e.startswith("geography.R:") and "R > 2" in e for e in errs)


def test_unknown_keys_and_all_violations_are_listed():
    errs = violations("geography: {foo: 1, R: 1.0}\nmodel: {gamma: -1}\nbogus: 3\n")
    assert "geography.foo: unknown key" in errs
    assert "bogus: unknown key" in errs
    assert any(e.startswith("geography.R:") for e in errs)
    assert any(e.startswith("model.gamma:") for e in errs)


def test_malformed_yaml_is_a_config_error():
    assert violations("geography: [unclosed\n")[0].startswith("<yaml>")


def test_reference_config_matches_the_reference_scenario():
    cfg = parse_config(reference_config_text())
    assert cfg.geo.n_sites == 3 and cfg.params.exchangeable
    assert cfg.params.scalars() == (1.0, 1.0, 0.5)
    expected = np.zeros((3, 2), dtype=int)
    expected[0] = 1
    assert_array_equal(cfg.kappa0, expected)


def test_check_generator_exits_zero_with_residual(tmp_path, capsys):
    cfg = write_config(tmp_path, "check: {points: 300}\n")
    out = tmp_path / "gen"
    assert main(["check-generator", "--config", cfg, "--out", str(out)]) == EXIT_OK
    data = json.loads((out / "check_generator.json").read_text())
    assert data["result"]["max_residual"] <= 1e-10
    assert data["result"]["verdict"] == "pass"
    assert "check-generator: pass" in capsys.readouterr().out


def test_config_error_exits_two_and_writes_nothing(tmp_path):
    cfg = write_config(tmp_path, "geography: {R: 2.0}\n")
    out = tmp_path / "never"
    assert main(["simulate-diffusion", "--config", cfg, "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    assert main(["simulate-diffusion", "--config", str(tmp_path / "missing.yaml"),
                 "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_preflight_rejects_command_specific_problems(tmp_path):
    out = tmp_path / "never"
    one_type = write_config(tmp_path, "model: {M: 1}\n", "one.yaml")
    assert main(["study-coexistence", "--config", one_type, "--out", str(out)]) == EXIT_CONFIG
    mixed = write_config(tmp_path, "model: {M: 2, gamma: [1.0, 2.0]}\n", "mixed.yaml")
    assert main(["check-duality", "--config", mixed, "--out", str(out)]) == EXIT_CONFIG
    bad_grid = write_config(tmp_path, "check: {t: 0.105, grid: 0.01}\n", "grid.yaml")
    assert main(["check-martingale", "--config", bad_grid, "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_small_duality_check_is_inconclusive_not_a_crash(tmp_path):
    cfg = write_config(tmp_path, reference_config_text() + "engine: {dt: 0.01}\n")
    out = tmp_path / "dual"
    assert main(["check-duality", "--config", cfg, "--replicates", "10", "--out", str(out)]) == EXIT_OK
    res = json.loads((out / "check_duality.json").read_text())["result"]
    assert res["verdict"] == "inconclusive" and res["replicates"] == 10


def test_numerical_abort_exits_three(tmp_path):
    cfg = write_config(tmp_path, "geography: {side: 1}\nmodel: {K: 5.0, lambda: 0.0}\n"
                                 "engine: {max_events: 50}\nobservation: {times: [0.0, 5.0]}\n")
    out = tmp_path / "boom"
    assert main(["simulate-particle", "--config", cfg, "--replicates", "2", "--out",
                 str(out)]) == EXIT_NUMERICAL
    assert not out.exists()


@pytest.mark.parametrize("command", ["simulate-particle", "simulate-diffusion", "simulate-dual"])
def test_outputs_are_bit_identical_and_carry_metadata(tmp_path, command):
    cfg = write_config(tmp_path, reference_config_text() + "engine: {dt: 0.01}\nreplicates: 6\n")
    stem = command.replace("-", "_")
    files = {}
    for run, threads in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / run
        assert main([command, "--config", cfg, "--seed", "11", "--threads", threads,
                     "--out", str(out)]) == EXIT_OK
        files[run] = ((out / f"{stem}.json").read_bytes(), (out / f"{stem}.csv").read_bytes())
    assert files["a"] == files["b"]
    # a different thread budget gives the same per-replicate rows and statistics
    assert files["a"][1] == files["c"][1]
    assert json.loads(files["a"][0])["result"] == json.loads(files["c"][0])["result"]
    meta, header, rows = read_csv(tmp_path / "a" / f"{stem}.csv")
    assert meta["schema_version"] == SCHEMA_VERSION
    for key in ("config_hash", "artifact_version", "seed", "replicates"):
        assert key in meta
    assert set(meta["scheme_constants"]) >= {"dt", "n_max", "fk_clip"}
    assert header[0] == "replicate" and len(rows) > 0


def test_format_flag_and_environment_output(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, MINIMAL + "replicates: 3\nengine: {dt: 0.01}\n")
    monkeypatch.setenv("SELFREG_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate-diffusion", "--config", cfg, "--format", "json"]) == EXIT_OK
    assert (tmp_path / "env" / "simulate_diffusion.json").exists()
    assert not (tmp_path / "env" / "simulate_diffusion.csv").exists()
    assert main(["simulate-diffusion", "--config", cfg, "--format", "csv",
                 "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "flag").iterdir()) == ["simulate_diffusion.csv"]


def test_martingale_and_study_commands_run(tmp_path):
    cfg = write_config(tmp_path, reference_config_text()
                       + "engine: {dt: 0.01}\ncheck: {t: 0.1, grid: 0.05}\n"
                         "study: {grid: [1.0, 2.0]}\n")
    out = tmp_path / "o"
    assert main(["check-martingale", "--config", cfg, "--replicates", "50", "--out", str(out)]) == EXIT_OK
    res = json.loads((out / "check_martingale.json").read_text())["result"]
    assert res["verdict"] == "inconclusive" and len(res["functions"]) == 1
    assert main(["study-dual-mass", "--config", cfg, "--replicates", "50", "--out", str(out)]) in (0, 1)
    study = json.loads((out / "study_dual_mass.json").read_text())["result"]
    assert study["study"] == "dual_mass_growth" and len(study["rows"]) == 2
