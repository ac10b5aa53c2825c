"""Config parsing, overrides, round-trips, and builder wiring."""

import pytest

from detrend.config import ConfigError, ExperimentConfig, format_value, parse_value


def test_defaults_buildable():
    cfg = ExperimentConfig()
    spec = cfg.task_spec()
    assert spec.heads == (2, 2, 3)
    net = cfg.network_config(spec.heads)
    assert net.heads == (2, 2, 3)
    tc = cfg.train_config()
    assert tc.momentum == 0.9 and tc.batch_size == 8
    assert tc.weight_decay == 0.0005 and tc.clip_threshold == 10.0


def test_parse_value_scalars_and_tuples():
    assert parse_value("3") == 3
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value("oam") == "oam"
    assert parse_value("1, 2, 3") == (1, 2, 3)
    assert parse_value("square, cross") == ("square", "cross")
    assert parse_value("5,") == (5,)
    assert parse_value("") == ()


def test_empty_tuple_roundtrips():
    assert parse_value(format_value(())) == ()


def test_format_parse_roundtrip():
    for v in (3, 0.25, True, "desk", (1, 2, 3), (7,)):
        got = parse_value(format_value(v))
        if isinstance(v, bool):
            assert got is v
        else:
            assert got == v


def test_set_override():
    cfg = ExperimentConfig()
    cfg.set_override("train.lr=0.05")
    assert cfg["train.lr"] == 0.05
    cfg.set_override("task.modifiers=1,2")
    assert cfg["task.modifiers"] == (1, 2)
    cfg.set_override("folds=2")  # scalar promoted to tuple to match the default
    assert cfg["folds"] == (2,)


def test_unknown_key_rejected():
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError):
        cfg.set_override("train.lrr=0.1")
    with pytest.raises(ConfigError):
        cfg.set_override("no-equals-sign")
    with pytest.raises(ConfigError):
        ExperimentConfig({"bogus": 1})


def test_file_roundtrip(tmp_path):
    cfg = ExperimentConfig()
    cfg.set_override("norm.method=bn_ad")
    cfg.set_override("train.epochs=7")
    path = tmp_path / "cfg.txt"
    path.write_text(cfg.to_text())
    back = ExperimentConfig.from_file(path)
    assert dict(back) == dict(cfg)


def test_file_comments_and_errors(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\ntrain.lr = 0.2  # inline\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg["train.lr"] == 0.2
    path.write_text("not a config line\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)
    path.write_text("garbage.key = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


def test_bad_norm_method_caught_at_build():
    cfg = ExperimentConfig()
    cfg["norm.method"] = "frobnicate"
    with pytest.raises(ConfigError):
        cfg.network_config((2, 2))


def test_bad_task_values_caught_at_build():
    cfg = ExperimentConfig()
    cfg.set_override("task.t_min=5")
    cfg.set_override("task.t_max=5")
    with pytest.raises(ConfigError):
        cfg.task_spec()  # too short for the count modifiers


def test_table1_preset():
    cfg = ExperimentConfig()
    cfg.set_override("net.preset=table1")
    net = cfg.network_config((15,))
    assert net.in_shape == (3, 112, 112)
    assert net.gru_channels == (64, 128)


def test_oa_task_kind():
    cfg = ExperimentConfig()
    cfg.set_override("task.kind=oa")
    cfg.set_override("task.t_min=50")
    cfg.set_override("task.t_max=50")
    spec = cfg.task_spec()
    assert len(spec.heads) == 2
