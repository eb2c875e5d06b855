"""Differentiable multi-agent environments around the WENO reconstruction.

Every interface of the grid (and, for Euler, every conserved component at
every interface) hosts one agent. Per timestep each agent sees its two
5-point split-flux stencils, emits convex sub-stencil weights, and the
environment advances the state with one forward-Euler step of the weighted
reconstruction. The per-interface reward is the negative discrepancy, in the
interface's adjacent cells, between the agent's next state and an anchor
next state produced by the standard WENO weights from the same current state
(or taken from a precomputed fixed trajectory).

The arithmetic exists twice, by design, with bit-identical values:

* plain numpy functions (``observe``, ``transition``, ``reward_markovian``,
  ...) that mirror the baseline solver's evaluation order exactly, and
* ``rollout``, which records the same operations as scalar nodes on a tape
  so the episode objective (the summed reward) can be differentiated end to
  end through every timestep and interface. With ``record=False`` the tape
  is truncated after every step, which keeps memory flat without changing a
  single bit of the computed values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .ics import ICSpec
from .policy import N_PARAMS, forward, record_forward
from .tape import Tape, TapeDomainError
from .tape.kinds import (OP_ABS, OP_ADD, OP_DIV, OP_MUL, OP_SQRT, OP_SQUARE,
                         OP_SUB)
from .weno import (C13_12, GAMMA_DEFAULT, ONE_SIXTH, WENO_D, WENO_EPS, WENO_P,
                   BlowupError, check_physical, lax_friedrichs_split,
                   max_wavespeed, monolithic_step, physical_flux,
                   smoothness_indicators, standard_weno_weights, stencil_maps,
                   weighted_interface_flux)

DT_MODES = ("fixed", "cfl")
REWARD_MODES = ("markovian", "fixed_weno", "fixed_true")
ALPHA_FLOOR = 1e-12
MAX_ROLLOUT_STEPS = 10_000_000


@dataclass(frozen=True)
class EnvSpec:
    """Physics, discretization, stepping, and reward wiring of one episode."""

    system: str
    grid: Grid
    T: int
    dt_mode: str = "fixed"
    dt: float | None = None
    cfl: float | None = None
    gamma: float = GAMMA_DEFAULT
    normalize_obs: bool = True
    reward_mode: str = "markovian"
    stop_gradient_anchor: bool = False
    eps: float = WENO_EPS
    p: int = WENO_P

    def __post_init__(self):
        if self.system not in ("burgers", "euler"):
            raise ValueError(f"unknown system {self.system!r}")
        if self.T < 0:
            raise ValueError("episode length T must be nonnegative")
        if self.dt_mode not in DT_MODES:
            raise ValueError(f"dt_mode must be one of {DT_MODES}")
        if self.dt_mode == "fixed":
            if self.dt is None or not self.dt > 0:
                raise ValueError("fixed stepping needs dt > 0")
        elif self.cfl is None or not 0.0 < self.cfl <= 1.0:
            raise ValueError("cfl stepping needs a number in (0, 1]")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.reward_mode != "markovian" and self.dt_mode != "fixed":
            raise ValueError("fixed-trajectory rewards need fixed dt: the "
                             "anchor is precomputed per step index")
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")

    @property
    def n_components(self) -> int:
        return 3 if self.system == "euler" else 1

    @property
    def n_interfaces(self) -> int:
        return self.grid.n_cells + 1


def env_for(ic: ICSpec, n_cells: int, T: int = 0,
            **kwargs) -> tuple[EnvSpec, np.ndarray]:
    """An EnvSpec plus initial cell averages for an initial condition."""
    grid = ic.grid(n_cells)
    return EnvSpec(ic.system, grid, T, **kwargs), ic.evaluate(grid)


# ------------------------------------------------------- plain environment

def compute_dt(u: np.ndarray, spec: EnvSpec) -> float:
    """The step size: configured dt, or C*dx/alpha with alpha floored."""
    if spec.dt_mode == "fixed":
        return spec.dt
    alpha = max(max_wavespeed(u, spec.system, spec.gamma), ALPHA_FLOOR)
    return spec.cfl * spec.grid.dx / alpha


def split_stencils(u: np.ndarray, spec: EnvSpec):
    """Raw 5-point windows of both split fluxes, each (C, N+1, 5).

    The minus windows are pre-mirrored, so one reconstruction formula (and
    one policy) serves both flux signs.
    """
    u = np.atleast_2d(u)
    f = physical_flux(u, spec.system, spec.gamma)
    alpha = max_wavespeed(u, spec.system, spec.gamma)
    fp, fm = lax_friedrichs_split(f, u, alpha)
    pm, mm = stencil_maps(spec.grid.n_cells, spec.grid.boundary)
    return fp[:, pm], fm[:, mm]


def observe(u: np.ndarray, spec: EnvSpec) -> np.ndarray:
    """Per-agent observations, (C, N+1, 10): plus stencil then minus stencil.

    With ``spec.normalize_obs`` each 5-point stencil is divided by its own
    max absolute value; identically-zero stencils pass through unchanged.
    """
    sp, sm = split_stencils(u, spec)
    if spec.normalize_obs:
        sp = _normalize_stencils(sp)
        sm = _normalize_stencils(sm)
    return np.concatenate([sp, sm], axis=-1)


def _normalize_stencils(s: np.ndarray) -> np.ndarray:
    m = np.max(np.abs(s), axis=-1, keepdims=True)
    return s / np.where(m == 0.0, 1.0, m)


def weno_equivalent_policy(stencil_plus: np.ndarray,
                           stencil_minus: np.ndarray,
                           eps: float = WENO_EPS, p: int = WENO_P):
    """The baseline scheme as a policy: nonlinear weights from raw stencils.

    Always computed on unnormalized stencil values; returns a weight triple
    (..., 3) per side.
    """
    wp = standard_weno_weights(smoothness_indicators(stencil_plus), eps, p)
    wm = standard_weno_weights(smoothness_indicators(stencil_minus), eps, p)
    return wp, wm


def policy_weights(theta: np.ndarray, u: np.ndarray, spec: EnvSpec):
    """The network's weights at every interface: (w_plus, w_minus)."""
    return forward(theta, observe(u, spec))


def transition(u: np.ndarray, weights_plus: np.ndarray,
               weights_minus: np.ndarray, dt: float,
               spec: EnvSpec) -> np.ndarray:
    """One forward-Euler step under the given convex sub-stencil weights.

    With the standard weights this reproduces the monolithic baseline step
    bit for bit.
    """
    u = np.atleast_2d(u)
    sp, sm = split_stencils(u, spec)
    flux = weighted_interface_flux(weights_plus, sp) \
        + weighted_interface_flux(weights_minus, sm)
    inv_dx = 1.0 / spec.grid.dx
    df = flux[:, 1:] - flux[:, :-1]
    rhs = (-inv_dx) * df
    return u + dt * rhs


def interface_rewards(u_next: np.ndarray, w_next: np.ndarray) -> np.ndarray:
    """Per-interface rewards from the two branches' next states, (N+1,).

    Interface i touches cells i-1 and i; its reward is minus the mean
    absolute state discrepancy over those cells. The boundary interfaces
    (0 and N) have a single interior cell and use it alone. Euler rewards
    are formed per component, then averaged with weight 1/3 each.
    """
    d = np.abs(np.atleast_2d(u_next) - np.atleast_2d(w_next))
    n_comp, n = d.shape
    r = np.empty((n_comp, n + 1))
    r[:, 0] = -1.0 * d[:, 0]
    r[:, n] = -1.0 * d[:, n - 1]
    r[:, 1:n] = (-0.5) * d[:, :-1] + (-0.5) * d[:, 1:]
    if n_comp == 1:
        return r[0]
    third = 1.0 / 3.0
    return third * r[0] + third * r[1] + third * r[2]


def reward_markovian(u_t: np.ndarray, u_next: np.ndarray, dt: float,
                     spec: EnvSpec) -> np.ndarray:
    """Rewards against a standard-WENO step taken from the same state u_t."""
    sp, sm = split_stencils(u_t, spec)
    wp, wm = weno_equivalent_policy(sp, sm, spec.eps, spec.p)
    w_next = transition(u_t, wp, wm, dt, spec)
    return interface_rewards(u_next, w_next)


def reward_fixed(u_next: np.ndarray, w_fixed_next: np.ndarray) -> np.ndarray:
    """Rewards against one state of a precomputed fixed trajectory."""
    return interface_rewards(u_next, w_fixed_next)


def fixed_weno_trajectory(u0: np.ndarray, spec: EnvSpec) -> np.ndarray:
    """The baseline scheme's trajectory from u0: (T+1, C, N) states."""
    u = np.atleast_2d(np.asarray(u0, dtype=np.float64)).copy()
    out = np.empty((spec.T + 1,) + u.shape)
    out[0] = u
    for t in range(spec.T):
        dt = compute_dt(u, spec)
        u = monolithic_step(u, dt, spec.grid, spec.system, spec.gamma,
                            spec.eps, spec.p)
        check_physical(u, spec.system, spec.gamma, step=t, time=(t + 1) * dt)
        out[t + 1] = u
    return out


# --------------------------------------------------------- taped episodes

def _rng(base: int, n: int) -> np.ndarray:
    return np.arange(base, base + n, dtype=np.int64)


@dataclass(frozen=True)
class _StepRecord:
    u_next_idx: np.ndarray     # (C, N) node handles of the agent next state
    reward_idx: np.ndarray     # (N+1,) node handles of interface rewards
    step_node: int             # scalar node: this step's summed reward


class _Recorder:
    """Records environment steps on one tape.

    Every helper mirrors the evaluation order of its plain counterpart in
    ``weno.py`` op for op (the shared formula card), so a recorded step with
    the standard weights reproduces ``monolithic_step`` bit for bit.
    """

    def __init__(self, spec: EnvSpec, theta: np.ndarray | None,
                 backend: str | None):
        self.spec = spec
        self.C = spec.n_components
        self.N = spec.grid.n_cells
        self.inv_dx = 1.0 / spec.grid.dx
        self.pm, self.mm = stencil_maps(self.N, spec.grid.boundary)
        self.tape = Tape(capacity=1 << 14, backend=backend)
        self.d_nodes = [self.tape.leaf(float(v)) for v in WENO_D]
        self.one_node = self.tape.leaf(1.0)
        self.theta_base = None
        if theta is not None:
            self.theta_base = self.tape.leaves(theta, trainable=True)

    # -- pieces ------------------------------------------------------------

    def _flux_and_speed(self, u_idx: np.ndarray):
        """Physical flux nodes (C, N) and the global wavespeed node."""
        tape, spec, N = self.tape, self.spec, self.N
        ui = u_idx.ravel()
        if spec.system == "burgers":
            sq = _rng(tape.ew1(OP_SQUARE, ui), N)
            f = _rng(tape.axpb(sq, 0.5), N).reshape(1, N)      # 0.5*(u*u)
            ab = _rng(tape.ew1(OP_ABS, ui), N)
            return f, tape.max_groups(ab, N)                   # max|u|
        rho, mom, et = u_idx
        vel = _rng(tape.ew2(OP_DIV, mom, rho), N)              # m/r
        mv = _rng(tape.ew2(OP_MUL, mom, vel), N)               # m*vel
        ke = _rng(tape.axpb(mv, 0.5), N)                       # 0.5*(m*vel)
        emk = _rng(tape.ew2(OP_SUB, et, ke), N)
        pres = _rng(tape.axpb(emk, spec.gamma - 1.0), N)       # (g-1)*(E-ke)
        f1 = _rng(tape.ew2(OP_ADD, mv, pres), N)               # m*vel + p
        epp = _rng(tape.ew2(OP_ADD, et, pres), N)
        f2 = _rng(tape.ew2(OP_MUL, vel, epp), N)               # vel*(E + p)
        f = np.stack([mom, f1, f2])
        gp = _rng(tape.axpb(pres, spec.gamma), N)
        gpr = _rng(tape.ew2(OP_DIV, gp, rho), N)
        cs = _rng(tape.ew1(OP_SQRT, gpr), N)                   # sqrt(g*p/r)
        av = _rng(tape.ew1(OP_ABS, vel), N)
        spd = _rng(tape.ew2(OP_ADD, av, cs), N)                # |v| + c
        return f, tape.max_groups(spd, N)

    def _observation(self, sp: np.ndarray, sm: np.ndarray) -> int:
        """Contiguous (rows, 10) observation block: plus values then minus.

        Normalization divides each stencil by its max absolute value; rows
        whose max is exactly zero are wired to a constant-one denominator,
        which passes the zeros through (the choice of divisor node is data-
        dependent wiring, the segment layout is not).
        """
        tape = self.tape
        rows = sp.shape[0]
        raw = np.concatenate([sp, sm], axis=1)
        if not self.spec.normalize_obs:
            return tape.axpb(raw.ravel(), 1.0)
        ap = _rng(tape.ew1(OP_ABS, sp.ravel()), 5 * rows)
        mxp = _rng(tape.max_groups(ap, 5), rows)
        am = _rng(tape.ew1(OP_ABS, sm.ravel()), 5 * rows)
        mxm = _rng(tape.max_groups(am, 5), rows)
        dp = np.where(self.tape.values[mxp] == 0.0, self.one_node, mxp)
        dm = np.where(self.tape.values[mxm] == 0.0, self.one_node, mxm)
        den = np.concatenate([np.repeat(dp[:, None], 5, axis=1),
                              np.repeat(dm[:, None], 5, axis=1)], axis=1)
        return tape.ew2(OP_DIV, raw.ravel(), den.ravel())

    _B_COEFFS = ((1.0, -4.0, 3.0), (1.0, -1.0), (3.0, -4.0, 1.0))

    def _weno_weights(self, s: np.ndarray):
        """Standard nonlinear weights of stencil rows s: three (rows,) blocks."""
        tape, spec = self.tape, self.spec
        rows = s.shape[0]
        als = []
        for k in range(3):
            win = s[:, k:k + 3]
            a = _rng(tape.lincomb(win.ravel(), (1.0, -2.0, 1.0)), rows)
            bi = win if k != 1 else s[:, (1, 3)]
            b = _rng(tape.lincomb(bi.ravel(), self._B_COEFFS[k]), rows)
            aa = _rng(tape.ew1(OP_SQUARE, a), rows)
            bb = _rng(tape.ew1(OP_SQUARE, b), rows)
            ca = _rng(tape.axpb(aa, C13_12), rows)
            cb = _rng(tape.axpb(bb, 0.25), rows)
            beta = _rng(tape.ew2(OP_ADD, ca, cb), rows)
            t = _rng(tape.axpb(beta, 1.0, spec.eps), rows)     # beta + eps
            pw = t
            for _ in range(int(spec.p) - 1):
                pw = _rng(tape.ew2(OP_MUL, pw, t), rows)
            dk = np.full(rows, self.d_nodes[k], dtype=np.int64)
            als.append(_rng(tape.ew2(OP_DIV, dk, pw), rows))
        total = _rng(tape.sum_groups(np.stack(als, axis=1).ravel(), 3), rows)
        return [_rng(tape.ew2(OP_DIV, al, total), rows) for al in als]

    _Q_COEFFS = ((2.0, -7.0, 11.0), (-1.0, 5.0, 2.0), (2.0, 5.0, -1.0))

    def _recon(self, s: np.ndarray):
        """The three sub-stencil reconstructions: three (rows,) blocks."""
        tape = self.tape
        rows = s.shape[0]
        qs = []
        for k, co in enumerate(self._Q_COEFFS):
            lin = _rng(tape.lincomb(s[:, k:k + 3].ravel(), co), rows)
            qs.append(_rng(tape.axpb(lin, ONE_SIXTH), rows))
        return qs

    def _total_flux(self, wp, qp, wm, qm) -> np.ndarray:
        """Interface flux nodes (C, N+1): both sides' convex combinations."""
        tape = self.tape
        rows = wp[0].size
        plus = _rng(tape.dotg(np.stack(wp, axis=1).ravel(),
                              np.stack(qp, axis=1).ravel(), 3), rows)
        minus = _rng(tape.dotg(np.stack(wm, axis=1).ravel(),
                               np.stack(qm, axis=1).ravel(), 3), rows)
        return _rng(tape.ew2(OP_ADD, plus, minus), rows).reshape(self.C, -1)

    def _update(self, ui: np.ndarray, flux: np.ndarray, dt: float):
        """Forward-Euler update nodes (C, N) from interface flux nodes."""
        tape = self.tape
        cn = self.C * self.N
        df = _rng(tape.ew2(OP_SUB, flux[:, 1:].ravel(),
                           flux[:, :-1].ravel()), cn)
        rhs = _rng(tape.axpb(df, -self.inv_dx), cn)
        du = _rng(tape.axpb(rhs, dt), cn)
        return _rng(tape.ew2(OP_ADD, ui, du), cn).reshape(self.C, self.N)

    def _rewards(self, un: np.ndarray, wn: np.ndarray):
        """Interface reward handles (N+1,) and the step's summed-reward node."""
        tape, C, N = self.tape, self.C, self.N
        d = _rng(tape.ew2(OP_SUB, un.ravel(), wn.ravel()), C * N)
        ad = _rng(tape.ew1(OP_ABS, d), C * N).reshape(C, N)
        pairs = np.stack([ad[:, :-1], ad[:, 1:]], axis=2)
        inter = _rng(tape.lincomb(pairs.ravel(), (-0.5, -0.5)),
                     C * (N - 1)).reshape(C, N - 1)
        bnd = _rng(tape.axpb(ad[:, (0, N - 1)].ravel(), -1.0),
                   2 * C).reshape(C, 2)
        rc = np.empty((C, N + 1), dtype=np.int64)
        rc[:, 0] = bnd[:, 0]
        rc[:, N] = bnd[:, 1]
        rc[:, 1:N] = inter
        if C == 1:
            r_idx = rc[0]
        else:
            third = 1.0 / 3.0
            r_idx = _rng(tape.lincomb(rc.T.ravel(), (third, third, third)),
                         N + 1)
        return r_idx, tape.sum_groups(r_idx, N + 1)

    # -- one full step -----------------------------------------------------

    def record_step(self, u_idx: np.ndarray, dt: float, *, agent: str,
                    w_fixed_next: np.ndarray | None = None) -> _StepRecord:
        """Record one environment step from the state nodes ``u_idx``.

        agent="net" runs the policy network on the observations;
        agent="weno" wires the agent's actions to the anchor's standard
        weights (the scheme-equivalent policy).
        """
        tape, spec, C, N = self.tape, self.spec, self.C, self.N
        ui = u_idx.ravel()
        cn = C * N
        f_idx, alpha_node = self._flux_and_speed(u_idx)
        # Lax-Friedrichs splitting 0.5*(f +- alpha*u)
        fi = f_idx.ravel()
        an = np.full(cn, alpha_node, dtype=np.int64)
        au = _rng(tape.ew2(OP_MUL, an, ui), cn)
        fp = _rng(tape.axpb(_rng(tape.ew2(OP_ADD, fi, au), cn), 0.5),
                  cn).reshape(C, N)
        fm = _rng(tape.axpb(_rng(tape.ew2(OP_SUB, fi, au), cn), 0.5),
                  cn).reshape(C, N)
        # 5-point windows; rows are component-major, then interface
        sp = fp[:, self.pm].reshape(-1, 5)
        sm = fm[:, self.mm].reshape(-1, 5)
        wp_agent = wm_agent = None
        if agent == "net":
            obs = self._observation(sp, sm)
            wb = record_forward(tape, self.theta_base, obs, C * (N + 1))
            w6 = _rng(wb, C * (N + 1) * 6).reshape(-1, 6)
            wp_agent = [w6[:, 0], w6[:, 1], w6[:, 2]]
            wm_agent = [w6[:, 3], w6[:, 4], w6[:, 5]]
        # the standard-weight anchor (also the mu agent's actions)
        markov = spec.reward_mode == "markovian"
        detach = markov and spec.stop_gradient_anchor
        if markov or agent == "weno":
            sp_a, sm_a, u_a = sp, sm, ui
            if detach:
                sp_a = _rng(tape.detach(sp.ravel()), sp.size).reshape(-1, 5)
                sm_a = _rng(tape.detach(sm.ravel()), sm.size).reshape(-1, 5)
                u_a = _rng(tape.detach(ui), cn)
            wp_anchor = self._weno_weights(sp_a)
            wm_anchor = self._weno_weights(sm_a)
            if agent == "weno":
                wp_agent, wm_agent = wp_anchor, wm_anchor
        # agent transition
        qp = self._recon(sp)
        qm = self._recon(sm)
        un = self._update(ui, self._total_flux(wp_agent, qp, wm_agent, qm),
                          dt)
        # anchor next state
        if markov:
            qp_a = self._recon(sp_a) if detach else qp
            qm_a = self._recon(sm_a) if detach else qm
            flux_a = self._total_flux(wp_anchor, qp_a, wm_anchor, qm_a)
            wn = self._update(u_a, flux_a, dt)
        else:
            w_leaf = tape.leaves(np.asarray(w_fixed_next,
                                            dtype=np.float64).ravel())
            wn = _rng(w_leaf, cn).reshape(C, N)
        reward_idx, step_node = self._rewards(un, wn)
        return _StepRecord(un, reward_idx, step_node)


@dataclass
class Rollout:
    """One episode: trajectory, rewards, and (when recorded) the tape."""

    spec: EnvSpec
    states: np.ndarray          # (steps+1, C, N) cell averages, s^0 first
    rewards: np.ndarray         # (steps, N+1) per-interface rewards
    dts: np.ndarray             # (steps,)
    total_reward: float
    blown_up: bool = False
    blowup_step: int | None = None
    tape: Tape | None = None
    objective_node: int | None = None
    theta_base: int | None = None

    @property
    def times(self) -> np.ndarray:
        """Timestamps of ``states``, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.dts)])

    def gradient(self) -> np.ndarray:
        """d(total reward)/d(theta) by one reverse sweep.

        Zeros when nothing differentiable was recorded (unrecorded episode,
        scheme-equivalent policy, or blowup before the first full step).
        """
        if self.objective_node is None or self.theta_base is None:
            return np.zeros(N_PARAMS)
        return self.tape.backward(self.objective_node).block(self.theta_base)


def rollout(spec: EnvSpec, u0: np.ndarray, theta: np.ndarray | None = None, *,
            policy: str = "net", record: bool = True,
            t_end: float | None = None,
            fixed_trajectory: np.ndarray | None = None,
            backend: str | None = None) -> Rollout:
    """Run one episode; optionally record it for differentiation.

    policy="net" requires a parameter vector ``theta``; policy="weno" runs
    the scheme-equivalent policy (no parameters). By default the episode is
    ``spec.T`` steps; ``t_end`` instead marches until that time, clipping
    the last step to land exactly. A blowup truncates the episode: returned
    arrays and the objective cover only the completed steps.

    Recorded and unrecorded rollouts execute the identical op sequence on
    the same kernels, so every state, reward, and the total agree bitwise.
    """
    if policy not in ("net", "weno"):
        raise ValueError(f"policy must be 'net' or 'weno', got {policy!r}")
    use_net = policy == "net"
    if use_net:
        theta = np.asarray(theta, dtype=np.float64).ravel()
        if theta.size != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} policy parameters, "
                             f"got {theta.size}")
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    C, N = spec.n_components, spec.grid.n_cells
    if u0.shape != (C, N):
        raise ValueError(f"initial state must have shape {(C, N)}, "
                         f"got {u0.shape}")
    check_physical(u0, spec.system, spec.gamma, step=0, time=0.0)
    w_traj = None
    if spec.reward_mode != "markovian":
        if t_end is not None:
            raise ValueError("fixed-trajectory rewards run for exactly T "
                             "steps; t_end is not meaningful")
        if fixed_trajectory is None:
            if spec.reward_mode == "fixed_true":
                raise ValueError("reward_mode 'fixed_true' needs a "
                                 "precomputed reference trajectory")
            fixed_trajectory = fixed_weno_trajectory(u0, spec)
        w_traj = np.asarray(fixed_trajectory, dtype=np.float64)
        if w_traj.shape != (spec.T + 1, C, N):
            raise ValueError(f"fixed trajectory must have shape "
                             f"{(spec.T + 1, C, N)}, got {w_traj.shape}")
        if not np.all(np.isfinite(w_traj)):
            raise ValueError("fixed trajectory contains non-finite values")

    rec = _Recorder(spec, theta if use_net else None, backend)
    tape = rec.tape
    base_mark = tape.mark()
    u_idx = _rng(tape.leaves(u0.ravel()), C * N).reshape(C, N)
    u_vals = u0
    states = [u0.copy()]
    rewards: list[np.ndarray] = []
    dts: list[float] = []
    step_sums: list[float] = []
    step_nodes: list[int] = []
    blown_up = False
    blowup_step = None
    t_now = 0.0
    step = 0
    while True:
        if t_end is None:
            if step >= spec.T:
                break
        elif t_now >= t_end * (1.0 - 1e-14) or t_end == 0.0:
            break
        elif step >= MAX_ROLLOUT_STEPS:
            raise RuntimeError("step budget exhausted before t_end")
        dt = compute_dt(u_vals, spec)
        if t_end is not None:
            dt = min(dt, t_end - t_now)
        pre = tape.mark()
        try:
            sr = rec.record_step(
                u_idx, dt, agent=policy,
                w_fixed_next=None if w_traj is None else w_traj[step + 1])
            un_vals = tape.values[sr.u_next_idx]
            check_physical(un_vals, spec.system, spec.gamma,
                           step=step, time=t_now + dt)
            r_vals = tape.values[sr.reward_idx]
            if not np.all(np.isfinite(r_vals)):
                raise BlowupError("non-finite rewards",
                                  step=step, time=t_now + dt)
            step_sum = tape.value(sr.step_node)
        except (BlowupError, TapeDomainError):
            tape.reset(pre)
            blown_up, blowup_step = True, step
            break
        states.append(un_vals)
        rewards.append(r_vals)
        dts.append(dt)
        step_sums.append(step_sum)
        if record:
            step_nodes.append(sr.step_node)
            u_idx = sr.u_next_idx
            if step == 0 and t_end is None and spec.T > 1:
                setup = base_mark[0] + C * N
                tape.reserve(tape.n + (spec.T - 1) * (tape.n - setup) + 16)
        else:
            tape.reset(base_mark)
            u_idx = _rng(tape.leaves(un_vals.ravel()),
                         C * N).reshape(C, N)
        u_vals = un_vals
        t_now += dt
        step += 1

    objective_node = None
    if record and step_nodes:
        objective_node = tape.sum_groups(
            np.asarray(step_nodes, dtype=np.int64), len(step_nodes))
        total = tape.value(objective_node)
    elif step_sums:
        total = step_sums[0]
        for v in step_sums[1:]:
            total += v
    else:
        total = 0.0
    return Rollout(
        spec=spec,
        states=np.asarray(states),
        rewards=(np.asarray(rewards) if rewards
                 else np.zeros((0, spec.n_interfaces))),
        dts=np.asarray(dts),
        total_reward=float(total),
        blown_up=blown_up,
        blowup_step=blowup_step,
        tape=tape if record else None,
        objective_node=objective_node,
        theta_base=rec.theta_base if record and use_net else None)
