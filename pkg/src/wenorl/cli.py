"""Command-line entry points.

Every subcommand reads the same flat RunConfig: defaults, then an optional
``--config`` file, then explicit flags (flags win). ``--dump-config``
prints the effective configuration in the config-file format and exits, so
any run is reproducible from its dumped config plus the checkpoint it
names.

Exit codes: 0 success, 2 configuration error, 3 numerical blowup or
training abort, 4 gradient check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import (FIELD_NAMES, ConfigError, dump_config, load_config,
                     parse_value, to_train_config)
from .gradcheck import check_gradient, default_case
from .ics import named_ic
from .policy import init_params, load_params
from .tape import available_backends
from .training import TrainingDiverged, train
from .weno import BlowupError

GRADCHECK_CASES = ((8, 2), (8, 5), (16, 2), (16, 5))


# ----------------------------------------------------------------- plumbing

def _horizon(cfg) -> float | None:
    return cfg.t_end if cfg.t_end > 0 else None


def _theta(cfg):
    """The policy parameters a command evaluates, or None for the baseline."""
    if cfg.policy == "weno":
        return None
    if cfg.policy != "net":
        raise ConfigError(f"policy must be net or weno, got {cfg.policy!r}")
    if not cfg.checkpoint:
        raise ConfigError("policy=net needs --checkpoint (or set policy=weno "
                          "to score the baseline scheme)")
    try:
        return load_params(cfg.checkpoint)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot load checkpoint {cfg.checkpoint}: {e}") \
            from e


def _ics(cfg):
    try:
        found = [named_ic(name) for name in cfg.ics]
    except KeyError as e:
        raise ConfigError(str(e)) from e
    for ic in found:
        if ic.system != cfg.system:
            raise ConfigError(f"initial condition {ic.name!r} belongs to the "
                              f"{ic.system} system, not {cfg.system}")
    return found


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, header, rows):
    ev.write_csv(path, header, rows)
    print(f"wrote {path}")


# --------------------------------------------------------------- subcommands

def cmd_train(cfg) -> int:
    tc = to_train_config(cfg)

    def progress(episode, total):
        if episode % tc.eval_every == 0:
            print(f"episode {episode}/{total}", flush=True)

    res = train(tc, cfg.out_dir, progress=progress)
    print(f"best checkpoint: episode {res.best_episode} "
          f"(evaluation total reward {res.best_eval_total:.17g})")
    print(f"artifacts in {res.out_dir}")
    return 0


def cmd_eval(cfg) -> int:
    theta = _theta(cfg)
    policy = "weno" if theta is None else "net"
    out = _out_dir(cfg)
    for ic in _ics(cfg):
        rows = ev.error_table([ic], cfg.grids, theta=theta, policy=policy,
                              t_end=_horizon(cfg), cfl=cfg.cfl,
                              factor=cfg.factor)
        for row in rows:
            _write(out / f"eval_{row.ic}_{row.n_cells}.csv",
                   ev.TABLE_HEADER, ev.table_rows([row]))
            flag = " DIVERGED" if row.diverged else ""
            print(f"  {row.ic:>20s} N={row.n_cells:<5d} t={row.t_end:g} "
                  f"l2={row.error:.6g}{flag}")
    return 0


TABLE_HEADER2 = ("ic", "n_cells", "t_end", "l2_error_net", "l2_error_weno",
                 "diverged_net", "diverged_weno")


def cmd_table(cfg) -> int:
    if not cfg.checkpoint:
        raise ConfigError("table compares a trained policy against the "
                          "baseline; --checkpoint is required")
    theta = load_params(cfg.checkpoint)
    out = _out_dir(cfg)
    print(f"{'ic':>20s} {'N':>5s} {'net':>12s} {'weno':>12s}")
    for ic in _ics(cfg):
        net = ev.error_table([ic], cfg.grids, theta=theta, policy="net",
                             t_end=_horizon(cfg), cfl=cfg.cfl,
                             factor=cfg.factor)
        weno = ev.error_table([ic], cfg.grids, policy="weno",
                              t_end=_horizon(cfg), cfl=cfg.cfl,
                              factor=cfg.factor)
        for a, b in zip(net, weno):
            row = (a.ic, a.n_cells, a.t_end, a.error, b.error,
                   int(a.diverged), int(b.diverged))
            _write(out / f"table_{a.ic}_{a.n_cells}.csv", TABLE_HEADER2,
                   [row])
            print(f"{a.ic:>20s} {a.n_cells:>5d} {a.error:>12.6g} "
                  f"{b.error:>12.6g}")
    return 0


def cmd_series(cfg) -> int:
    theta = _theta(cfg)
    out = _out_dir(cfg)
    for ic in _ics(cfg):
        for n in cfg.grids:
            weno = ev.error_series(ic, n, policy="weno",
                                   t_end=_horizon(cfg), factor=cfg.factor)
            if theta is None:
                header = ("step", "time", "l2_error_weno")
                rows = [(p.step, p.time, p.error) for p in weno]
            else:
                net = ev.error_series(ic, n, theta=theta, policy="net",
                                      t_end=_horizon(cfg), factor=cfg.factor)
                header = ("step", "time", "l2_error_net", "l2_error_weno")
                rows = [(a.step, a.time, a.error, b.error)
                        for a, b in zip(net, weno)]
            _write(out / f"series_{ic.name}_{n}.csv", header, rows)
    return 0


def cmd_random_suite(cfg) -> int:
    if not cfg.checkpoint:
        raise ConfigError("random-suite compares a trained policy against "
                          "the baseline; --checkpoint is required")
    theta = load_params(cfg.checkpoint)
    out = _out_dir(cfg)

    def progress(i, total):
        if i % 100 == 0 or i == total:
            print(f"environment {i}/{total}", flush=True)

    rows = ev.run_random_suite(theta, cfg.count, seed=cfg.seed, cfl=cfg.cfl,
                               factor=cfg.factor, t_end=_horizon(cfg),
                               progress=progress)
    _write(out / "random_suite.csv", ev.SUITE_HEADER, ev.suite_rows(rows))
    ok = [(r.error_policy, r.error_weno) for r in rows
          if not (r.diverged_policy or r.diverged_weno)]
    n_div = len(rows) - len(ok)
    print(f"{len(rows)} environments, {n_div} with a divergence")
    if len(ok) >= 3:
        from scipy.stats import spearmanr
        rho = spearmanr([a for a, _ in ok], [b for _, b in ok]).statistic
        print(f"Spearman correlation (policy vs baseline error): {rho:.4f}")
    return 0


def cmd_actions(cfg) -> int:
    theta = _theta(cfg)
    policy = "weno" if theta is None else "net"
    t_query = cfg.t_query
    if t_query != "second_to_last":
        try:
            t_query = float(t_query)
        except ValueError:
            raise ConfigError(f"t_query must be a time or 'second_to_last', "
                              f"got {cfg.t_query!r}") from None
    out = _out_dir(cfg)
    for ic in _ics(cfg):
        for n in cfg.grids:
            dump = ev.action_dump(ic, n, theta, policy=policy,
                                  t_query=t_query, t_end=_horizon(cfg))
            _write(out / f"actions_{ic.name}_{n}.csv",
                   ev.actions_header(dump.w_plus.shape[0]),
                   ev.actions_rows(dump))
            print(f"  {ic.name} N={n}: weights at t={dump.time:g} "
                  f"(step {dump.step})")
    return 0


def cmd_gradcheck(cfg) -> int:
    worst = None
    all_passed = True
    for n_cells, T in GRADCHECK_CASES:
        spec, u0, theta = default_case(cfg.seed, n_cells=n_cells, T=T)
        res = check_gradient(spec, u0, theta, backend=cfg.backend or None)
        print(f"N={n_cells:<3d} T={T}: {res.summary()}")
        all_passed &= res.passed
        if worst is None or res.max_rel_error > worst.max_rel_error:
            worst = res
    print("worst case per parameter block (coordinate, relative error):")
    for name, (coord, rel) in sorted(worst.block_worst.items()):
        print(f"  {name:<3s} coord {coord:<6d} rel {rel:.3e}")
    if not all_passed:
        print("gradient check FAILED", file=sys.stderr)
        return 4
    print("gradient check passed")
    return 0


def cmd_benchmark(cfg) -> int:
    from time import perf_counter

    from .envs import EnvSpec, rollout

    ic = _ics(cfg)[0]
    grid = ic.grid(cfg.n_cells)
    spec = EnvSpec(cfg.system, grid, cfg.T, dt=cfg.dt)
    u0 = ic.evaluate(grid)
    theta = load_params(cfg.checkpoint) if cfg.checkpoint else \
        init_params(cfg.seed)
    print(f"episode: {cfg.system}/{ic.name}, N={cfg.n_cells}, T={cfg.T}")
    grads = {}
    for backend in available_backends():
        t0 = perf_counter()
        ro = rollout(spec, u0, theta, policy="net", record=True,
                     backend=backend)
        t1 = perf_counter()
        grads[backend] = ro.gradient()
        t2 = perf_counter()
        n_nodes = len(ro.tape)
        print(f"  {backend:<7s} record {t1 - t0:7.3f}s   backward "
              f"{t2 - t1:7.3f}s   total {t2 - t0:7.3f}s   "
              f"({n_nodes} tape nodes)")
    names = list(grads)
    for other in names[1:]:
        same = np.array_equal(grads[names[0]], grads[other])
        print(f"  gradients {names[0]} vs {other}: "
              f"{'bit-identical' if same else 'DIFFER'}")
        if not same:
            return 1
    return 0


# --------------------------------------------------------------- the parser

COMMANDS = {
    "train": (cmd_train, "train a policy, writing checkpoints and a log"),
    "eval": (cmd_eval, "final-time errors for one policy on named profiles"),
    "table": (cmd_table, "policy-vs-baseline error table across grids"),
    "series": (cmd_series, "per-step error over an episode"),
    "random-suite": (cmd_random_suite,
                     "policy-vs-baseline errors over random draws"),
    "actions": (cmd_actions, "per-interface weight dump at a queried time"),
    "gradcheck": (cmd_gradcheck,
                  "tape gradients against finite differences"),
    "benchmark": (cmd_benchmark, "time the tape kernel backends"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wenorl",
        allow_abbrev=False,
        description="Learned WENO sub-stencil weighting: training and "
                    "evaluation for 1-D conservation laws.")
    sub = parser.add_subparsers(dest="command", required=True)
    epilog = ("any configuration key can also be set as a flag, e.g. "
              "--n-cells 128 or --ics standing_sine,tophat; run with "
              "--dump-config to see every key and its effective value")
    for name, (handler, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, allow_abbrev=False,
                           epilog=epilog)
        p.set_defaults(handler=handler)
        p.add_argument("--config", metavar="FILE",
                       help="flat key=value configuration file")
        p.add_argument("--dump-config", action="store_true",
                       help="print the effective configuration and exit")
        for field in FIELD_NAMES:
            p.add_argument(f"--{field.replace('_', '-')}", dest=field,
                           metavar="V", default=None,
                           help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {name: parse_value(name, getattr(args, name))
                     for name in FIELD_NAMES
                     if getattr(args, name) is not None}
        cfg = load_config(args.config, overrides)
        if args.dump_config:
            print(dump_config(cfg), end="")
            return 0
        return args.handler(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 3
    except BlowupError as e:
        print(f"numerical blowup: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
