import json

import pytest

from dect.config import ConfigError, RunConfig, config_from_dict, dump_config, load_config


def test_defaults():
    cfg = config_from_dict({})
    assert isinstance(cfg, RunConfig)
    assert (cfg.grid.nx, cfg.geometry.n_angles, cfg.geometry.n_detectors) == (64, 90, 128)
    assert cfg.admm.lambda_tv == 0.01 and cfg.admm.beta == 0.5e-4
    assert (cfg.admm.patch_half_width, cfg.admm.search_half_width) == (3, 9)
    assert cfg.noise.snr_db == 70 and cfg.y0 == 1e5


def test_yaml_and_json_round_trip(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("method: ync\nadmm:\n  lambda_nlm: 3.0e-4\n  lm:\n    max_steps: 5\nnoise:\n  seed: 4\n")
    cfg = load_config(p)
    assert cfg.method == "ync" and cfg.admm.lambda_nlm == 3e-4 and cfg.admm.lm.max_steps == 5
    j = tmp_path / "echo.json"
    j.write_text(dump_config(cfg))
    assert load_config(j) == cfg
    assert json.loads(dump_config(cfg))["noise"]["seed"] == 4


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"admm": {"lambda_nlm": -1}},
    {"admm": {"unknown": 2}},
    {"method": "sirt"},
    {"stride": 0},
    {"grid": {"nx": "big"}},
    {"grid": {"pixel_size": 0}},
    {"schema_version": 2},
    {"admm": {"init": "random"}},
    {"noise": {"enabled": "yes"}},
    {"fbp": {"filter": "shepp"}},
    {"threads": 0},
    {"admm": {"search_half_width": 1, "patch_half_width": 3}},
])
def test_rejections(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_unparseable_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
