"""Command-line interface: config validation, subcommands, exit codes."""

import csv
import json
import os

import pytest
import yaml

from nvratchet import cli


def write_config(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


FAST_DOC = {
    "cluster": {"j_nv_p1_MHz": 0.5, "j_h_p1_MHz": 0.1},
    "protocol": {"beta_up_mT_per_ms": 20.0, "beta_down_mT_per_ms": 20.0,
                 "field_range_mT": 0.5, "optical_placement": "low-end",
                 "n_cycles": 1, "dephase": True, "with_t1": False},
    "initial_state": "thermal",
}


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_load_run_config_roundtrip(tmp_path):
    cfg = cli.load_run_config(write_config(tmp_path, FAST_DOC))
    assert cfg["cluster"]["j_nv_p1"] == 0.5
    assert cfg["protocol"]["beta_up"] == 20.0
    assert cfg["initial_state"] == "thermal"
    resolved = cli.resolved_config(cfg)
    assert resolved["protocol"]["beta_up_mT_per_ms"] == 20.0
    # the resolved form parses again to the same internal config
    reparsed = cli.load_run_config(write_config(tmp_path, resolved, "r2.yaml"))
    assert reparsed == cfg


def test_missing_unit_suffix_named(tmp_path):
    doc = {"protocol": {"beta_up": 3.0}}
    with pytest.raises(cli.ConfigError, match="beta_up_mT_per_ms"):
        cli.load_run_config(write_config(tmp_path, doc))


def test_unknown_key_and_section(tmp_path):
    with pytest.raises(cli.ConfigError, match="unknown key"):
        cli.load_run_config(write_config(tmp_path, {"cluster": {"spin": 1}}))
    with pytest.raises(cli.ConfigError, match="unknown config sections"):
        cli.load_run_config(write_config(tmp_path, {"clutser": {}}))


def test_value_validation(tmp_path):
    doc = {"protocol": {"beta_up_mT_per_ms": -1.0}}
    with pytest.raises(cli.ConfigError, match="out of range"):
        cli.load_run_config(write_config(tmp_path, doc))
    doc = {"protocol": {"dephase": "yes"}}
    with pytest.raises(cli.ConfigError, match="true/false"):
        cli.load_run_config(write_config(tmp_path, doc))
    doc = {"initial_state": "warm"}
    with pytest.raises(cli.ConfigError, match="initial_state"):
        cli.load_run_config(write_config(tmp_path, doc))


def test_dotted_overrides(tmp_path):
    path = write_config(tmp_path, FAST_DOC)
    cfg = cli.load_run_config(path, ["protocol.n_cycles=3",
                                     "cluster.j_h_p1_MHz=0.2"])
    assert cfg["protocol"]["n_cycles"] == 3
    assert cfg["cluster"]["j_h_p1"] == 0.2
    with pytest.raises(cli.ConfigError, match="section.key=value"):
        cli.load_run_config(path, ["n_cycles:3"])


def test_config_file_errors(tmp_path):
    with pytest.raises(cli.ConfigError, match="not found"):
        cli.load_run_config(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [unclosed")
    with pytest.raises(cli.ConfigError, match="cannot parse"):
        cli.load_run_config(str(bad))


def test_bundled_config_resolution():
    path = cli.bundled_config_path("fig2a")
    assert os.path.exists(path)
    with pytest.raises(cli.ConfigError):
        cli.bundled_config_path("fig999")


def test_simulate_fast_run(tmp_path, out_root):
    cfg = write_config(tmp_path, FAST_DOC)
    out = str(tmp_path / "run1")
    assert cli.main(["simulate", cfg, "--out", out]) == 0
    rows = read_csv(os.path.join(out, "data.csv"))
    assert len(rows) == 3  # optical + up + down
    assert set(rows[0]) == {"t_ms", "B_mT", "pol_H", "pol_NV", "pol_P1",
                            "cycle_index", "event_tag"}
    meta = json.load(open(os.path.join(out, "meta.json")))
    assert meta["rows"] == 3
    # embedded config re-runs to identical output
    cfg2 = write_config(tmp_path, meta["config"], "meta_rerun.yaml")
    out2 = str(tmp_path / "run2")
    assert cli.main(["simulate", cfg2, "--out", out2]) == 0
    assert open(os.path.join(out, "data.csv")).read() \
        == open(os.path.join(out2, "data.csv")).read()


def test_simulate_zero_cycles(tmp_path):
    cfg = write_config(tmp_path, {**FAST_DOC,
                                  "protocol": {**FAST_DOC["protocol"],
                                               "n_cycles": 0}})
    out = str(tmp_path / "empty")
    assert cli.main(["simulate", cfg, "--out", out]) == 0
    with open(os.path.join(out, "data.csv")) as fh:
        assert len(fh.readlines()) == 1  # header only


def test_simulate_config_error_exit_code(tmp_path, capsys):
    doc = {"protocol": {"beta_up_mT_per_ms": -3.0}}
    cfg = write_config(tmp_path, doc)
    assert cli.main(["simulate", cfg]) == 1
    assert "beta_up_mT_per_ms" in capsys.readouterr().err


def test_simulate_physics_error_exit_code(tmp_path, capsys):
    # a 20 mT window needs more steps than the budget to resolve the
    # narrow gap, so the run aborts with a step-size error
    doc = {"cluster": {"j_nv_p1_MHz": 0.5, "j_h_p1_MHz": 0.1},
           "protocol": {"beta_up_mT_per_ms": 3.0,
                        "beta_down_mT_per_ms": 3.0,
                        "field_range_mT": 20.0, "n_cycles": 1}}
    cfg = write_config(tmp_path, doc)
    assert cli.main(["simulate", cfg]) == 2
    assert "physics error" in capsys.readouterr().err


def test_diagram_uncoupled_and_default(tmp_path, capsys):
    out = str(tmp_path / "diag")
    doc = {"cluster": {"j_nv_p1_MHz": 0.5, "j_h_p1_MHz": 0.1}}
    cfg = write_config(tmp_path, doc)
    assert cli.main(["diagram", cfg, "--points", "201", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "data.csv"))
    assert {r["label"] for r in rows} == {f"branch{i}" for i in range(12)}
    meta = json.load(open(os.path.join(out, "meta.json")))
    narrow = [c for c in meta["crossings"] if c["gap"] < 0.05]
    assert len(narrow) >= 2
    assert cli.main(["diagram", cfg, "--b-min", "52.0", "--b-max", "51.0"]) == 1


def test_tm_command(tmp_path, capsys):
    out = str(tmp_path / "tm")
    assert cli.main(["tm", "--p1", "0.98", "--sd", "--t1",
                     "--cycles", "100", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "data.csv"))
    assert len(rows) == 100
    assert float(rows[-1]["pol_H"]) == pytest.approx(0.428, abs=0.01)
    meta = json.load(open(os.path.join(out, "meta.json")))
    assert meta["params"]["sd_mode"] is True


def test_scan_and_scenario_list(tmp_path, out_root, capsys):
    assert cli.main(["scenario", "list"]) == 0
    listing = capsys.readouterr().out
    assert "fig2a" in listing and "figS8" in listing
    assert cli.main(["scan", "figS1", "--points", "3",
                     "--set", "beta_lo=0.5"]) == 0
    scan_dirs = list((out_root / "figS1").iterdir())
    assert len(scan_dirs) == 1
    rows = read_csv(str(scan_dirs[0] / "data.csv"))
    assert len(rows) == 3


def test_scan_unknown_scenario(capsys):
    assert cli.main(["scan", "fig99"]) == 1
    err = capsys.readouterr().err
    assert "registered" in err and "fig2a" in err


def test_scan_invalid_override(capsys):
    assert cli.main(["scan", "figS1", "--set", "bogus=1"]) == 1
    assert "valid keys" in capsys.readouterr().err
