"""Flat key=value run configuration shared by every CLI command.

One RunConfig carries the knobs of all commands; each command reads its
slice. Defaults reproduce the reference Burgers training setup (N=128,
T=250, dt=0.0004, lr=0.0003, eval every 50 episodes, the three named
training profiles). Values come from, in rising precedence: dataclass
defaults, a config file, command-line flags.

The file format is deliberately plain: one ``key=value`` per line, ``#``
comments, case-sensitive keys matching the field names below.
``dump_config`` emits exactly this format, and a dumped config re-ingests
to an identical RunConfig.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .training import TrainConfig


class ConfigError(ValueError):
    """A configuration file or value the run cannot proceed with."""


@dataclass(frozen=True)
class RunConfig:
    # physics and discretization
    system: str = "burgers"
    ics: tuple[str, ...] = ("standing_sine", "rarefaction",
                            "accelerating_shock")
    n_cells: int = 128
    T: int = 250
    dt: float = 0.0004
    normalize_obs: bool = True
    stop_gradient_anchor: bool = False
    # training
    episodes: int = 10_000
    eval_every: int = 50
    learning_rate: float = 3e-4
    seed: int = 0
    reward: str = "markovian"
    grad_clip: float = 0.0
    out_dir: str = "runs/train"
    # evaluation
    checkpoint: str = ""            # policy parameters; empty = baseline only
    policy: str = "net"             # net | weno
    grids: tuple[int, ...] = (64, 128, 256)
    t_end: float = 0.0              # 0 = each profile's own horizon
    cfl: float = 0.1                # cross-resolution step size rule
    factor: int = 8                 # reference-grid refinement
    count: int = 1200               # random-suite draws
    t_query: str = "second_to_last"
    out: str = "out"                # directory for emitted CSVs
    # execution
    backend: str = ""               # tape kernels: "" auto | cython | python


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_strs(s: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in s.split(",") if part.strip())


def _parse_ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in _parse_strs(s))
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") \
            from e


_PARSERS = {
    "system": str, "ics": _parse_strs, "n_cells": int, "T": int, "dt": float,
    "normalize_obs": _parse_bool, "stop_gradient_anchor": _parse_bool,
    "episodes": int, "eval_every": int, "learning_rate": float, "seed": int,
    "reward": str, "grad_clip": float, "out_dir": str, "checkpoint": str,
    "policy": str, "grids": _parse_ints, "t_end": float, "cfl": float,
    "factor": int, "count": int, "t_query": str, "out": str, "backend": str,
}

FIELD_NAMES = tuple(f.name for f in fields(RunConfig))
assert set(_PARSERS) == set(FIELD_NAMES)


def parse_value(key: str, raw: str):
    """One field's value from its textual form (file or flag)."""
    if key not in _PARSERS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _PARSERS[key](raw)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def read_config_file(path) -> dict:
    """Key -> parsed value from a flat key=value file."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive field names
    try:
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read(), source=str(path))
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    return {k: parse_value(k, v) for k, v in parser["run"].items()}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)  # shortest decimal that round-trips exactly
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """The effective configuration in its own file format (re-ingestable)."""
    return "".join(f"{name}={_format_value(getattr(cfg, name))}\n"
                   for name in FIELD_NAMES)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file's values, then explicit overrides."""
    values = {}
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        values.update(overrides)
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def to_train_config(cfg: RunConfig) -> TrainConfig:
    try:
        return TrainConfig(
            system=cfg.system, ics=cfg.ics, n_cells=cfg.n_cells, T=cfg.T,
            dt=cfg.dt, episodes=cfg.episodes, eval_every=cfg.eval_every,
            learning_rate=cfg.learning_rate, seed=cfg.seed,
            reward_mode=cfg.reward, grad_clip=cfg.grad_clip,
            normalize_obs=cfg.normalize_obs,
            stop_gradient_anchor=cfg.stop_gradient_anchor,
            reference_factor=cfg.factor,
            backend=cfg.backend or None)
    except ValueError as e:
        raise ConfigError(str(e)) from e
