import os

import pytest
import yaml

from utils.config import PipelineConfig, load_config
from utils.errors import ConfigError
from utils.paths import configs_path, default_config


def _write(tmp_path, doc):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_default_config_mirrors_full_scale():
    cfg = load_config(default_config)
    assert cfg.scenarios.n_segments * cfg.scenarios.n_maneuvers * cfg.scenarios.n_degradations == 33300
    assert (cfg.split.n_cal, cfg.split.n_test) == (4000, 4000)
    assert cfg.alpha == 0.1 and cfg.tolerance == 0.01
    assert cfg.train.hidden_widths == (380, 380)
    assert str(cfg.grouping_spec) == "curvature:0.003"
    assert cfg.target_coverage == pytest.approx(0.9)


def test_desk_config():
    cfg = load_config(f"{configs_path}/desk.yaml")
    assert cfg.scenarios.n_segments == 60
    assert len(cfg.grid) == 3


def test_overrides_and_seed_propagation(tmp_path):
    path = _write(tmp_path, {"seed": 3, "split": {"n_cal": 10, "n_test": 10}})
    cfg = load_config(path, {"alpha": 0.2, "grouping": "dummy:2,0.1", "out": None})
    assert cfg.alpha == 0.2
    assert cfg.grouping_spec.kind == "dummy"
    assert cfg.split.seed == 3 and cfg.train.seed == 3
    assert cfg.out == PipelineConfig().out

    cfg = load_config(path, {"seed": 9})
    assert cfg.seed == 9 and cfg.split.seed == 9

    pinned = _write(tmp_path, {"seed": 3, "train": {"seed": 42}})
    assert load_config(pinned).train.seed == 42


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"alpha": 1.5},
    {"grouping": "curvature:-1"},
    {"select_on": "validation"},
    {"train": {"lr": -1.0}},
    {"train": {"learning_rate": 0.1}},
    {"split": {"n_cal": 40000, "n_test": 0}},
    {"grid": [{"depth": 3}]},
    {"feature_names": ["w_min"]},
    {"gate": {"degradation": "D9"}},
    {"roads": {"width_range": [1.0, 3.0]}},
])
def test_invalid_configs(tmp_path, doc):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, doc))


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_to_dict_is_plain(tmp_path):
    d = load_config(default_config).to_dict()
    assert d["train"]["hidden_widths"] == [380, 380]
    assert d["gate"]["accels"] == [2.5, 3.0, 3.5, 4.0, 4.5]
    # round-trips through YAML
    assert yaml.safe_load(yaml.safe_dump(d))["scenarios"]["n_segments"] == 222


def test_workers_default_to_available_cores(tmp_path):
    expected = os.cpu_count() or 1
    assert PipelineConfig().workers == expected
    assert load_config(default_config).workers == expected
    assert load_config(_write(tmp_path, {"seed": 1}), {"workers": 3}).workers == 3
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"workers": 0}))
