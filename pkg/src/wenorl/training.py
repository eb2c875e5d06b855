"""Training loop: batched differentiable episodes, Adam ascent, selection.

Each training iteration unrolls one recorded episode per configured initial
condition, sums the episode gradients in batch order, and takes one Adam
step that *ascends* the total reward. Every ``eval_every`` episodes (and
once before training) the current policy runs unrecorded evaluation
episodes on the training ICs; the checkpoint with the highest summed
evaluation reward is the selected policy.

Evaluation episodes always score the Markovian reward, whatever reward the
trainer optimizes, so ablation runs remain comparable under one selection
metric.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .envs import (REWARD_MODES, EnvSpec, Rollout, fixed_weno_trajectory,
                   rollout)
from .evaluation import REFERENCE_FACTOR, csv_field, reference_trajectory
from .ics import named_ic
from .policy import N_PARAMS, init_params, load_params, save_params

log = logging.getLogger(__name__)

LOG_HEADER = ("episode", "ic_name", "total_reward", "eval_flag", "wallclock")
LOG_NAME = "training_log.csv"
BEST_NAME = "best"
ABORT_STREAK = 10


class TrainingDiverged(RuntimeError):
    """Every batch episode blew up for too many consecutive episodes."""

    def __init__(self, episode: int, streak: int):
        super().__init__(
            f"all batch episodes blew up for {streak} consecutive episodes "
            f"(through episode {episode}); the policy has destabilized")
        self.episode = episode
        self.streak = streak


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    """One training run; defaults are the Burgers reference setup."""

    system: str = "burgers"
    ics: tuple[str, ...] = ("standing_sine", "rarefaction",
                            "accelerating_shock")
    n_cells: int = 128
    T: int = 250
    dt: float = 0.0004
    episodes: int = 10_000
    eval_every: int = 50
    learning_rate: float = 3e-4
    seed: int = 0
    reward_mode: str = "markovian"
    grad_clip: float = 0.0          # max gradient norm; 0 disables clipping
    normalize_obs: bool = True
    stop_gradient_anchor: bool = False
    reference_factor: int = REFERENCE_FACTOR   # resolved-anchor refinement
    backend: str | None = None      # tape backend override, None = default

    def __post_init__(self):
        if self.system not in ("burgers", "euler"):
            raise ValueError(f"unknown system {self.system!r}")
        if not self.ics:
            raise ValueError("at least one training initial condition")
        for name in self.ics:
            ic = named_ic(name)
            if ic.system != self.system:
                raise ValueError(f"initial condition {name!r} belongs to "
                                 f"the {ic.system} system, not {self.system}")
        if self.episodes < 1:
            raise ValueError("episodes must be positive")
        if self.eval_every < 1 or self.episodes % self.eval_every:
            raise ValueError("eval_every must divide the episode count")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.T > 0:
            raise ValueError("episode length T must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be nonnegative (0 disables)")


# --------------------------------------------------------------------- adam

@dataclass
class AdamState:
    """First/second moment accumulators and the bias-correction count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int = N_PARAMS) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, *,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update, ascending the objective."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    return theta + lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale the gradient down to max_norm when it exceeds it (0 = off)."""
    if max_norm <= 0.0:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm <= max_norm:
        return grad
    return grad * (max_norm / norm)


def batch_gradient(rollouts: list[Rollout]) -> np.ndarray:
    """Episode gradients summed in batch order (fixed for determinism)."""
    total = np.zeros(N_PARAMS)
    for ro in rollouts:
        total += ro.gradient()
    return total


# -------------------------------------------------------------------- train

@dataclass
class TrainResult:
    out_dir: Path
    log_path: Path
    best_episode: int
    best_checkpoint: Path
    best_eval_total: float
    eval_history: list[tuple[int, float]]   # (episode, summed eval reward)
    final_theta: np.ndarray
    skipped_steps: int

    def best_theta(self) -> np.ndarray:
        return load_params(self.best_checkpoint)


def _checkpoint_name(episode: int) -> str:
    return f"checkpoint_{episode:06d}.bin"


def _log_row(episode, ic_name, total, eval_flag, t0):
    wall = time.perf_counter() - t0
    return (episode, ic_name, total, int(eval_flag), wall)


def train(config: TrainConfig, out_dir, *, progress=None) -> TrainResult:
    """Run one seeded training job; artifacts land in ``out_dir``.

    Writes an append-only CSV log (one row per episode per IC, plus rows
    flagged eval_flag=1 for evaluation passes), a parameter checkpoint at
    every evaluation episode, and a ``best`` marker naming the checkpoint
    with the highest summed evaluation reward.

    Raises TrainingDiverged when every batch episode blows up for
    ABORT_STREAK consecutive episodes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME

    ics = [named_ic(name) for name in config.ics]
    train_specs, eval_specs, u0s, anchors = [], [], [], []
    for ic in ics:
        grid = ic.grid(config.n_cells)
        spec = EnvSpec(config.system, grid, config.T, dt=config.dt,
                       normalize_obs=config.normalize_obs,
                       reward_mode=config.reward_mode,
                       stop_gradient_anchor=config.stop_gradient_anchor)
        u0 = ic.evaluate(grid)
        if config.reward_mode == "fixed_weno":
            anchor = fixed_weno_trajectory(u0, spec)
        elif config.reward_mode == "fixed_true":
            anchor = reference_trajectory(ic, spec,
                                          factor=config.reference_factor)
        else:
            anchor = None
        train_specs.append(spec)
        eval_specs.append(replace(spec, reward_mode="markovian"))
        u0s.append(u0)
        anchors.append(anchor)

    theta = init_params(config.seed)
    adam = AdamState.zeros()
    t0 = time.perf_counter()
    eval_history: list[tuple[int, float]] = []
    best_episode = -1
    best_total = -np.inf
    skipped = 0
    blown_streak = 0

    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)

        def emit(rows):
            writer.writerows([csv_field(v) for v in row] for row in rows)
            fh.flush()

        def evaluate(episode: int) -> float:
            rows, total = [], 0.0
            for ic, spec, u0 in zip(ics, eval_specs, u0s):
                ro = rollout(spec, u0, theta, policy="net", record=False,
                             backend=config.backend)
                total += ro.total_reward
                rows.append(_log_row(episode, ic.name, ro.total_reward,
                                     True, t0))
            emit(rows)
            save_params(theta, out_dir / _checkpoint_name(episode))
            nonlocal best_episode, best_total
            if total > best_total:
                best_episode, best_total = episode, total
            eval_history.append((episode, total))
            return total

        evaluate(0)
        for episode in range(1, config.episodes + 1):
            rows, rollouts = [], []
            for ic, spec, u0, anchor in zip(ics, train_specs, u0s, anchors):
                ro = rollout(spec, u0, theta, policy="net", record=True,
                             fixed_trajectory=anchor, backend=config.backend)
                rollouts.append(ro)
                rows.append(_log_row(episode, ic.name, ro.total_reward,
                                     False, t0))
            emit(rows)

            if all(ro.blown_up for ro in rollouts):
                blown_streak += 1
                if blown_streak >= ABORT_STREAK:
                    raise TrainingDiverged(episode, blown_streak)
            else:
                blown_streak = 0

            grad = batch_gradient(rollouts)
            if np.all(np.isfinite(grad)):
                theta = adam_step(theta, clip_gradient(grad, config.grad_clip),
                                  adam, lr=config.learning_rate)
            else:
                skipped += 1
                log.warning("episode %d: non-finite gradient, step skipped",
                            episode)

            if episode % config.eval_every == 0:
                evaluate(episode)
            if progress is not None:
                progress(episode, config.episodes)

    best_path = out_dir / _checkpoint_name(best_episode)
    with open(out_dir / BEST_NAME, "w") as fh:
        fh.write(f"episode={best_episode}\n"
                 f"checkpoint={best_path.name}\n"
                 f"eval_total_reward={best_total:.17g}\n")
    return TrainResult(out_dir, log_path, best_episode, best_path,
                       best_total, eval_history, theta, skipped)


def read_best(out_dir) -> tuple[int, Path, float]:
    """Parse a run directory's ``best`` marker."""
    out_dir = Path(out_dir)
    fields = {}
    for line in (out_dir / BEST_NAME).read_text().splitlines():
        k, _, v = line.partition("=")
        fields[k] = v
    return (int(fields["episode"]), out_dir / fields["checkpoint"],
            float(fields["eval_total_reward"]))
