import json

import pytest

from olahgp.config import DEFAULTS, ConfigError, bundled_config_path, dump_config, load_config, merge


def test_bundled_configs_load():
    cfg = load_config("bundled")
    assert cfg["scenario"]["gamma"] == 2.0
    assert cfg["planner"]["horizon_n"] == 5 and cfg["planner"]["l_max"] == 6160.0
    assert cfg["scenario"]["res_opt"] == 32 and cfg["scenario"]["res_eval"] == 128
    assert load_config("smoke")["scenario"]["res_eval"] == 16


def test_unknown_bundle():
    with pytest.raises(ConfigError):
        bundled_config_path("huge")


def test_gamma_required():
    with pytest.raises(ConfigError, match="gamma"):
        load_config()


def test_overrides_take_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"scenario": {"gamma": 1.5, "seed": 3}}))
    cfg = load_config(p, {"scenario": {"seed": 9}})
    assert cfg["scenario"]["seed"] == 9 and cfg["scenario"]["gamma"] == 1.5
    assert cfg["cost"] == DEFAULTS["cost"]


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="planner.horizon"):
        merge(DEFAULTS, {"planner": {"horizon": 3}})
    with pytest.raises(ConfigError):
        merge(DEFAULTS, {"solver": {}})


def test_relative_paths_resolved(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"scenario": {"gamma": 2.0, "truth": "t.fgrid"}}))
    assert load_config(p)["scenario"]["truth"] == str(tmp_path / "t.fgrid")


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n\n "scenario": [\n')
    with pytest.raises(ConfigError, match=r"c\.json:4:"):
        load_config(p)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/c.json")


def test_dump_round_trip(tmp_path):
    cfg = load_config("bundled")
    p = tmp_path / "d.json"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
