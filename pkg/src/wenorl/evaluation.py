"""Evaluation harness: reference solutions, error tables, series, suites.

Every accuracy number in the package is an L2 distance to a reference
produced by the same baseline scheme on a finer grid (default 8x cells,
CFL-limited steps) whose states are block-averaged back onto the coarse
cells -- for uniform grids the mean of the fine cell averages inside a
coarse cell *is* the coarse cell average, so no interpolation enters.

The policy under evaluation runs through the same plain-numpy environment
functions the differentiable rollout mirrors, so evaluation numbers agree
bitwise with what training saw.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .envs import (EnvSpec, compute_dt, env_for, observe, split_stencils,
                   transition, weno_equivalent_policy)
from .grid import l2_error
from .ics import ICSpec, named_ic, sample_random_envs, sample_resolution
from .policy import forward
from .weno import BlowupError, check_physical, solve

REFERENCE_FACTOR = 8
REFERENCE_CFL = 0.1
BURGERS_DT = 0.0004
EULER_DT = 0.0001


def default_dt(system: str) -> float:
    """The fixed step size each system trains and evaluates with."""
    return BURGERS_DT if system == "burgers" else EULER_DT


def reference_solution(ic: ICSpec, n_cells: int, times, *,
                       factor: int = REFERENCE_FACTOR,
                       cfl: float = REFERENCE_CFL) -> np.ndarray:
    """Fine-grid baseline states block-averaged to n_cells, (len(times),C,N)."""
    fine = ic.grid(factor * n_cells)
    states = solve(ic.evaluate(fine), fine, ic.system, times, cfl=cfl)
    t, c, nf = states.shape
    return states.reshape(t, c, n_cells, factor).mean(axis=-1)


def reference_trajectory(ic: ICSpec, spec: EnvSpec, *,
                         factor: int = REFERENCE_FACTOR,
                         cfl: float = REFERENCE_CFL) -> np.ndarray:
    """Reference states at every step time of a fixed-dt episode.

    Shaped (T+1, C, N); feeds the reward mode that anchors each step to the
    resolved solution instead of to a one-step baseline transition.
    """
    if spec.dt_mode != "fixed":
        raise ValueError("step-indexed references need fixed dt")
    times = np.arange(spec.T + 1) * spec.dt
    return reference_solution(ic, spec.grid.n_cells, times,
                              factor=factor, cfl=cfl)


# ----------------------------------------------------------- policy runner

@dataclass
class EvolveResult:
    states: np.ndarray          # (n_times, C, N) at the requested times
    diverged: bool
    blowup_time: float | None = None


def _advance(u: np.ndarray, step_dt: float, spec: EnvSpec,
             theta: np.ndarray | None, policy: str) -> np.ndarray:
    """One step of the chosen policy; raises BlowupError on bad states."""
    sp, sm = split_stencils(u, spec)
    if policy == "net":
        wp, wm = forward(theta, observe(u, spec))
    else:
        wp, wm = weno_equivalent_policy(sp, sm, spec.eps, spec.p)
    return transition(u, wp, wm, step_dt, spec)


def evolve_policy(ic_or_spec, u0: np.ndarray, times, *,
                  theta: np.ndarray | None = None, policy: str = "weno",
                  dt: float | None = None, cfl: float | None = None,
                  max_steps: int = 10_000_000) -> EvolveResult:
    """March the chosen policy to each requested time (plain numpy loop).

    This is the evaluation-speed twin of ``envs.rollout``: same operations,
    no tape. A blowup marks the result diverged; states from the blowup on
    are NaN.
    """
    if isinstance(ic_or_spec, EnvSpec):
        spec = ic_or_spec
    else:
        ic: ICSpec = ic_or_spec
        if (dt is None) == (cfl is None):
            raise ValueError("give exactly one of dt or cfl")
        mode = {"dt_mode": "fixed", "dt": dt} if dt is not None else \
            {"dt_mode": "cfl", "cfl": cfl}
        spec = EnvSpec(ic.system, ic.grid(u0.shape[-1]), 0, **mode)
    if policy not in ("net", "weno"):
        raise ValueError(f"policy must be 'net' or 'weno', got {policy!r}")

    u = np.atleast_2d(np.asarray(u0, dtype=np.float64)).copy()
    t = 0.0
    out = np.full((len(times),) + u.shape, np.nan)
    nstep = 0
    diverged = False
    blowup_time = None
    for j, target in enumerate(times):
        if diverged:
            break
        if target < t - 1e-12:
            raise ValueError("output times must be ascending")
        while t < target * (1.0 - 1e-14):
            step_dt = min(compute_dt(u, spec), target - t)
            try:
                u = _advance(u, step_dt, spec, theta, policy)
                check_physical(u, spec.system, spec.gamma,
                               step=nstep, time=t + step_dt)
            except BlowupError:
                diverged = True
                blowup_time = t
                break
            t += step_dt
            nstep += 1
            if nstep >= max_steps:
                raise RuntimeError("step budget exhausted")
        else:
            out[j] = u
    return EvolveResult(states=out, diverged=diverged,
                        blowup_time=blowup_time)


# ------------------------------------------------------------ error tables

@dataclass
class ErrorRow:
    ic: str
    n_cells: int
    t_end: float
    error: float
    diverged: bool


def error_table(ic_names, resolutions, *, theta: np.ndarray | None = None,
                policy: str = "weno", t_end: float | None = None,
                cfl: float = REFERENCE_CFL,
                factor: int = REFERENCE_FACTOR) -> list[ErrorRow]:
    """Final-time L2 errors against the fine reference, one row per (ic, N).

    Both the run under test and the reference march with CFL-limited steps
    (same number C) so every resolution is stable regardless of wave speed.
    """
    rows = []
    for name in ic_names:
        ic = named_ic(name) if isinstance(name, str) else name
        horizon = ic.t_max if t_end is None else t_end
        for n in resolutions:
            u0 = ic.evaluate(ic.grid(n))
            res = evolve_policy(ic, u0, [horizon], theta=theta,
                                policy=policy, cfl=cfl)
            if res.diverged:
                rows.append(ErrorRow(ic.name, n, horizon, float("nan"), True))
                continue
            ref = reference_solution(ic, n, [horizon], factor=factor,
                                     cfl=cfl)
            err = l2_error(res.states[0], ref[0], ic.grid(n).dx)
            rows.append(ErrorRow(ic.name, n, horizon, err, False))
    return rows


@dataclass
class SeriesPoint:
    step: int
    time: float
    error: float


def error_series(ic: ICSpec, n_cells: int, *,
                 theta: np.ndarray | None = None, policy: str = "weno",
                 t_end: float | None = None, dt: float | None = None,
                 factor: int = REFERENCE_FACTOR) -> list[SeriesPoint]:
    """L2 error vs the reference at every step of a fixed-dt episode.

    Marches exactly like a training episode (fixed dt, default the system's
    training step) and scores each of the T+1 visited states, so the series
    is the per-step error profile of an episode. If t_end is not a multiple
    of dt the series ends on the last full step.
    """
    horizon = ic.t_max if t_end is None else t_end
    dt = default_dt(ic.system) if dt is None else dt
    n_steps = int(np.floor(horizon / dt + 1e-9))
    times = dt * np.arange(n_steps + 1)
    grid = ic.grid(n_cells)
    spec = EnvSpec(ic.system, grid, n_steps, dt=dt)
    u = np.atleast_2d(ic.evaluate(grid))
    states = np.full((n_steps + 1,) + u.shape, np.nan)
    states[0] = u
    for k in range(n_steps):
        try:
            u = _advance(u, dt, spec, theta, policy)
            check_physical(u, spec.system, spec.gamma, step=k,
                           time=times[k + 1])
        except BlowupError:
            break
        states[k + 1] = u
    ref = reference_solution(ic, n_cells, times, factor=factor)
    out = []
    for k, t in enumerate(times):
        if np.all(np.isfinite(states[k])):
            err = l2_error(states[k], ref[k], grid.dx)
        else:
            err = float("nan")
        out.append(SeriesPoint(k, float(t), err))
    return out


# ------------------------------------------------------------ random suite

@dataclass
class SuiteRow:
    index: int
    family: str
    n_cells: int
    t_end: float
    error_policy: float
    error_weno: float
    diverged_policy: bool
    diverged_weno: bool
    params: dict = field(default_factory=dict)


def run_random_suite(theta: np.ndarray, count: int = 1200, *, seed: int = 0,
                     cfl: float = REFERENCE_CFL,
                     factor: int = REFERENCE_FACTOR,
                     t_end: float | None = None,
                     progress=None) -> list[SuiteRow]:
    """Policy-vs-baseline errors over randomly drawn initial conditions.

    Draws cycle the three random families evenly; each draw also samples a
    resolution. Both schemes run CFL-limited steps (the draws' wave speeds
    vary too much for one fixed dt). Divergence is recorded, not raised.
    """
    rng = np.random.default_rng(seed)
    ics = sample_random_envs(count, rng)
    rows = []
    for i, ic in enumerate(ics):
        n = sample_resolution(rng)
        horizon = ic.t_max if t_end is None else t_end
        u0 = ic.evaluate(ic.grid(n))
        ref = reference_solution(ic, n, [horizon], factor=factor)
        dx = ic.grid(n).dx
        errs = {}
        div = {}
        for pol in ("net", "weno"):
            res = evolve_policy(ic, u0, [horizon], theta=theta, policy=pol,
                                cfl=cfl)
            div[pol] = res.diverged
            errs[pol] = float("nan") if res.diverged else \
                l2_error(res.states[0], ref[0], dx)
        rows.append(SuiteRow(i, ic.name, n, horizon, errs["net"],
                             errs["weno"], div["net"], div["weno"],
                             dict(ic.params)))
        if progress is not None:
            progress(i + 1, count)
    return rows


# ------------------------------------------------------------ action dumps

@dataclass
class ActionDump:
    time: float
    step: int
    x: np.ndarray               # (N+1,) interface positions
    w_plus: np.ndarray          # (C, N+1, 3)
    w_minus: np.ndarray         # (C, N+1, 3)
    weno_plus: np.ndarray       # the baseline's weights at the same state
    weno_minus: np.ndarray


def action_dump(ic: ICSpec, n_cells: int, theta: np.ndarray | None, *,
                policy: str = "net", t_query="second_to_last",
                t_end: float | None = None) -> ActionDump:
    """The per-interface weights the policy chose at one queried time.

    ``t_query`` is a time in [0, t_end], or "second_to_last" for the state
    one fixed step before the horizon -- the action view right before the
    episode ends.
    """
    horizon = ic.t_max if t_end is None else t_end
    dt = default_dt(ic.system)
    if t_query == "second_to_last":
        n_steps = max(int(np.ceil(horizon / dt - 1e-9)) - 1, 0)
        t_query = n_steps * dt
    elif not 0.0 <= float(t_query) <= horizon:
        raise ValueError("t_query must lie inside the evaluation horizon")
    u0 = ic.evaluate(ic.grid(n_cells))
    res = evolve_policy(ic, u0, [float(t_query)], theta=theta, policy=policy,
                        dt=dt)
    if res.diverged:
        raise BlowupError("the run diverged before the queried time",
                          time=res.blowup_time)
    u = res.states[0]
    spec = EnvSpec(ic.system, ic.grid(n_cells), 0, dt=dt)
    sp, sm = split_stencils(u, spec)
    if policy == "net":
        wp, wm = forward(theta, observe(u, spec))
    else:
        wp, wm = weno_equivalent_policy(sp, sm)
    ap, am = weno_equivalent_policy(sp, sm)
    return ActionDump(
        time=float(t_query),
        step=int(round(float(t_query) / dt)),
        x=ic.grid(n_cells).interfaces(),
        w_plus=np.atleast_3d(wp), w_minus=np.atleast_3d(wm),
        weno_plus=np.atleast_3d(ap), weno_minus=np.atleast_3d(am),
    )


# -------------------------------------------------------------- csv output

def csv_field(v) -> str:
    """Floats at 17 significant digits (lossless), everything else str()."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    """CSV with floats at 17 significant digits (lossless round trip).

    Unix line endings regardless of platform: the determinism guarantees
    compare these files byte for byte.
    """
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([csv_field(v) for v in row])
    return buf.getvalue()


def table_rows(rows: list[ErrorRow]):
    return [(r.ic, r.n_cells, r.t_end, r.error, int(r.diverged))
            for r in rows]


TABLE_HEADER = ("ic", "n_cells", "t_end", "l2_error", "diverged")
SERIES_HEADER = ("step", "time", "l2_error")
SUITE_HEADER = ("index", "family", "n_cells", "t_end", "l2_error_policy",
                "l2_error_weno", "diverged_policy", "diverged_weno", "params")


def series_rows(points: list[SeriesPoint]):
    return [(p.step, p.time, p.error) for p in points]


def suite_rows(rows: list[SuiteRow]):
    return [(r.index, r.family, r.n_cells, r.t_end, r.error_policy,
             r.error_weno, int(r.diverged_policy), int(r.diverged_weno),
             ";".join(f"{k}={csv_field(v)}" for k, v in sorted(r.params.items())))
            for r in rows]


def actions_header(n_components: int):
    cols = ["x"]
    for c in range(n_components):
        tag = f"c{c}_" if n_components > 1 else ""
        cols += [f"{tag}w_plus_{k}" for k in range(3)]
        cols += [f"{tag}w_minus_{k}" for k in range(3)]
        cols += [f"{tag}weno_plus_{k}" for k in range(3)]
        cols += [f"{tag}weno_minus_{k}" for k in range(3)]
    return tuple(cols)


def actions_rows(dump: ActionDump):
    c_comp = dump.w_plus.shape[0]
    rows = []
    for i, x in enumerate(dump.x):
        row = [x]
        for c in range(c_comp):
            row += list(dump.w_plus[c, i]) + list(dump.w_minus[c, i])
            row += list(dump.weno_plus[c, i]) + list(dump.weno_minus[c, i])
        rows.append(tuple(row))
    return rows
