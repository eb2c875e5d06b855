"""Flat key=value configuration: parsing, precedence, exact round-trips."""

import dataclasses

import pytest

from wenorl.config import (FIELD_NAMES, ConfigError, RunConfig, dump_config,
                           load_config, parse_value, read_config_file,
                           to_train_config)
from wenorl.training import TrainConfig


# ------------------------------------------------------------------ defaults

def test_defaults_reproduce_reference_training_setup():
    cfg = RunConfig()
    assert cfg.system == "burgers"
    assert cfg.ics == ("standing_sine", "rarefaction", "accelerating_shock")
    assert cfg.n_cells == 128
    assert cfg.T == 250
    assert cfg.dt == 0.0004
    assert cfg.episodes == 10_000
    assert cfg.eval_every == 50
    assert cfg.learning_rate == 3e-4
    assert cfg.reward == "markovian"
    assert cfg.cfl == 0.1
    assert cfg.factor == 8
    assert cfg.grids == (64, 128, 256)


def test_every_field_has_a_parser():
    for name in FIELD_NAMES:
        # parse_value must at least recognize the key
        with pytest.raises(ConfigError):
            parse_value(name + "_bogus", "1")


# ------------------------------------------------------------------- parsing

@pytest.mark.parametrize("key,raw,expected", [
    ("n_cells", "64", 64),
    ("dt", "1e-3", 1e-3),
    ("learning_rate", "0.0003", 3e-4),
    ("ics", " standing_sine , tophat ", ("standing_sine", "tophat")),
    ("grids", "64,128,256", (64, 128, 256)),
    ("normalize_obs", "true", True),
    ("normalize_obs", "off", False),
    ("stop_gradient_anchor", "1", True),
    ("t_query", "0.1", "0.1"),
    ("backend", "python", "python"),
])
def test_parse_value_types(key, raw, expected):
    assert parse_value(key, raw) == expected


def test_parse_value_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_value("bogus", "1")


@pytest.mark.parametrize("key,raw", [
    ("episodes", "many"),
    ("dt", "fast"),
    ("grids", "64,two"),
    ("normalize_obs", "maybe"),
])
def test_parse_value_rejects_bad_values(key, raw):
    with pytest.raises(ConfigError):
        parse_value(key, raw)


# --------------------------------------------------------------------- files

def test_file_values_override_defaults_and_flags_override_files(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dt=0.001\nseed=7\n")
    cfg = load_config(path, {"dt": 0.002})
    assert cfg.dt == 0.002          # flag wins
    assert cfg.seed == 7            # file wins over default
    assert cfg.n_cells == 128       # default survives


def test_file_comments_and_blank_lines_are_ignored(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# reference run\n\nn_cells=32\n# trailing comment\n")
    assert read_config_file(path) == {"n_cells": 32}


def test_unknown_file_key_is_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("bogus=1\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(path)


def test_missing_file_is_rejected():
    with pytest.raises(ConfigError, match="cannot read config file"):
        load_config("/nonexistent/run.cfg")


def test_malformed_file_is_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("this line has no equals sign\n")
    with pytest.raises(ConfigError, match="malformed config file"):
        load_config(path)


# --------------------------------------------------------------- round-trips

def test_dump_lists_every_field_once():
    lines = dump_config(RunConfig()).splitlines()
    assert [ln.split("=", 1)[0] for ln in lines] == list(FIELD_NAMES)


def test_dump_round_trips_to_an_identical_config(tmp_path):
    cfg = RunConfig(dt=1 / 3, ics=("standing_sine",), grids=(16, 32),
                    normalize_obs=False, t_end=0.02, checkpoint="a/b.bin")
    path = tmp_path / "dumped.cfg"
    path.write_text(dump_config(cfg))
    reloaded = load_config(path)
    assert reloaded == cfg
    assert dump_config(reloaded) == dump_config(cfg)


def test_dump_floats_are_shortest_exact_form():
    text = dump_config(RunConfig())
    assert "dt=0.0004\n" in text
    assert "learning_rate=0.0003\n" in text


# ------------------------------------------------------------ train mapping

def test_to_train_config_maps_fields():
    cfg = RunConfig(ics=("standing_sine",), n_cells=16, T=4, episodes=4,
                    eval_every=2, reward="fixed_weno", factor=4,
                    backend="python", grad_clip=1.0)
    tc = to_train_config(cfg)
    assert isinstance(tc, TrainConfig)
    assert tc.reward_mode == "fixed_weno"
    assert tc.reference_factor == 4
    assert tc.backend == "python"
    assert tc.grad_clip == 1.0
    assert tc.ics == ("standing_sine",)


def test_to_train_config_empty_backend_means_auto():
    cfg = RunConfig(ics=("standing_sine",), n_cells=16, T=4, episodes=4,
                    eval_every=2)
    assert to_train_config(cfg).backend is None


def test_to_train_config_wraps_validation_errors():
    cfg = RunConfig(ics=("standing_sine",), episodes=10, eval_every=3)
    with pytest.raises(ConfigError):
        to_train_config(cfg)


def test_run_config_is_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        RunConfig().n_cells = 1
