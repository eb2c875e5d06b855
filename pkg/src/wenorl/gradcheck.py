"""Gradient verification: the reverse-mode tape against finite differences.

The check compares every coordinate of the episode gradient dR/dtheta from
``envs.rollout`` with a central difference (R(theta+h e_i) - R(theta-h e_i))
/ (2h) of an independently written, vectorized objective evaluator.

Finite differences in float64 cannot certify small gradient entries: the
round-off noise of one objective evaluation, divided by 2h, leaves a noise
floor near 1e-10 -- exactly the scale of the absolute tolerance. The harness
therefore runs two phases: a fast float64 sweep over all requested
coordinates, then a retry of every coordinate that sweep could not clear in
80-bit extended precision (numpy longdouble), which lowers the difference
noise by three orders of magnitude. Coordinates still failing after the
precise phase are reported as genuine disagreements.

Two caveats determine the default test point:

* The objective is only piecewise smooth: ``max`` reductions (the global
  Lax-Friedrichs speed, the observation normalizers) have kinks at ties.
  States with symmetries sit exactly on those kinks, where one-sided tape
  subgradients and straddling central differences legitimately disagree, so
  the default initial profile is a random asymmetric sine mixture.
* A freshly initialized policy has a zero output layer, so hidden-layer
  coordinates carry an exactly-zero gradient and an exactly-zero central
  difference; they are checked cheaply in the float64 sweep. Head
  coordinates get the precise treatment. Layers behind a nonzero head are
  exercised by ``directional_check`` and by subset checks in the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvSpec, rollout
from .grid import Grid
from .policy import LAYER_DIMS, N_PARAMS, block_of, init_params, views
from .weno import GAMMA_DEFAULT, WENO_D, stencil_maps

DEFAULT_H = 1e-6
DEFAULT_REL_TOL = 1e-6
DEFAULT_ABS_FLOOR = 1e-10

_HEAD_START = N_PARAMS - (LAYER_DIMS[-1][0] * LAYER_DIMS[-1][1]
                          + LAYER_DIMS[-1][1])


# ------------------------------------------------ vectorized plain objective

def _batched_flux(u: np.ndarray, system: str, gamma: float):
    """Physical flux and max wavespeed for u of shape (B, C, N)."""
    if system == "burgers":
        f = 0.5 * (u * u)
        alpha = np.max(np.abs(u), axis=(1, 2))
        return f, alpha
    r, m, et = u[:, 0], u[:, 1], u[:, 2]
    vel = m / r
    ke = 0.5 * (m * vel)
    pres = (gamma - 1.0) * (et - ke)
    f = np.stack([m, m * vel + pres, vel * (et + pres)], axis=1)
    c = np.sqrt(gamma * pres / r)
    alpha = np.max(np.abs(vel) + c, axis=1)
    return f, alpha


def _betas(s: np.ndarray) -> np.ndarray:
    """Jiang-Shu smoothness indicators for stencil rows (..., 5)."""
    s0, s1, s2, s3, s4 = (s[..., k] for k in range(5))
    a0 = s0 - 2.0 * s1 + s2
    b0 = s0 - 4.0 * s1 + 3.0 * s2
    a1 = s1 - 2.0 * s2 + s3
    b1 = s1 - s3
    a2 = s2 - 2.0 * s3 + s4
    b2 = 3.0 * s2 - 4.0 * s3 + s4
    c = 13.0 / 12.0
    return np.stack([c * (a0 * a0) + 0.25 * (b0 * b0),
                     c * (a1 * a1) + 0.25 * (b1 * b1),
                     c * (a2 * a2) + 0.25 * (b2 * b2)], axis=-1)


def _recon(s: np.ndarray) -> np.ndarray:
    """Third-order sub-stencil reconstructions for stencil rows (..., 5)."""
    s0, s1, s2, s3, s4 = (s[..., k] for k in range(5))
    sixth = 1.0 / 6.0
    q0 = (2.0 * s0 - 7.0 * s1 + 11.0 * s2) * sixth
    q1 = (-1.0 * s1 + 5.0 * s2 + 2.0 * s3) * sixth
    q2 = (2.0 * s2 + 5.0 * s3 - 1.0 * s4) * sixth
    return np.stack([q0, q1, q2], axis=-1)


def _weno_weights(betas: np.ndarray, eps: float, p: int) -> np.ndarray:
    t = betas + eps
    pw = t
    for _ in range(int(p) - 1):
        pw = pw * t
    al = WENO_D / pw
    return al / (al[..., 0] + al[..., 1] + al[..., 2])[..., None]


def _mlp_weights(theta: np.ndarray, obs: np.ndarray):
    """Both weight heads for theta (B, P) and observations (B, R, 10)."""
    b = theta.shape[0]
    pos, parts = 0, []
    for n_in, n_out in LAYER_DIMS:
        parts.append(theta[:, pos:pos + n_in * n_out]
                     .reshape(b, n_out, n_in))
        pos += n_in * n_out
        parts.append(theta[:, pos:pos + n_out].reshape(b, 1, n_out))
        pos += n_out
    w1, b1, w2, b2, w3, b3 = parts
    h = np.maximum(obs @ w1.transpose(0, 2, 1) + b1, 0.0)
    h = np.maximum(h @ w2.transpose(0, 2, 1) + b2, 0.0)
    z = h @ w3.transpose(0, 2, 1) + b3
    trip = z.reshape(z.shape[:-1] + (2, 3))
    e = np.exp(trip - np.max(trip, axis=-1, keepdims=True))
    w = e / (e[..., 0] + e[..., 1] + e[..., 2])[..., None]
    return w[..., 0, :], w[..., 1, :]


def batched_objective(thetas: np.ndarray, spec: EnvSpec, u0: np.ndarray,
                      dtype=np.float64) -> np.ndarray:
    """Episode objectives R(theta) for a batch of parameter vectors.

    An independent, batch-vectorized implementation of the Markovian-reward
    episode that ``rollout`` records; it never touches the tape. The dtype
    parameter allows evaluation in extended precision, which finite
    differencing needs to beat its own round-off.
    """
    if spec.reward_mode != "markovian":
        raise ValueError("the batched objective implements Markovian rewards")
    theta = np.ascontiguousarray(np.asarray(thetas, dtype=dtype))
    if theta.ndim != 2 or theta.shape[1] != N_PARAMS:
        raise ValueError(f"expected (B, {N_PARAMS}) parameters, "
                         f"got {theta.shape}")
    b = theta.shape[0]
    c_comp, n = spec.n_components, spec.grid.n_cells
    u = np.broadcast_to(np.asarray(u0, dtype=dtype),
                        (b, c_comp, n)).copy()
    pm, mm = stencil_maps(n, spec.grid.boundary)
    inv_dx = 1.0 / spec.grid.dx
    total = np.zeros(b, dtype=dtype)

    for _ in range(spec.T):
        f, alpha = _batched_flux(u, spec.system, spec.gamma)
        if spec.dt_mode == "fixed":
            dt = spec.dt
        else:
            dt = (spec.cfl * spec.grid.dx
                  / np.maximum(alpha, 1e-12))[:, None, None]
        au = alpha[:, None, None] * u
        sp = (0.5 * (f + au))[:, :, pm]
        sm = (0.5 * (f - au))[:, :, mm]

        obs = np.concatenate([sp, sm], axis=-1)
        if spec.normalize_obs:
            for half in (slice(0, 5), slice(5, 10)):
                m = np.max(np.abs(obs[..., half]), axis=-1, keepdims=True)
                obs[..., half] /= np.where(m == 0.0, 1.0, m)
        wp, wm = _mlp_weights(theta, obs.reshape(b, -1, 10))
        wp = wp.reshape(b, c_comp, n + 1, 3)
        wm = wm.reshape(b, c_comp, n + 1, 3)

        qp, qm = _recon(sp), _recon(sm)
        flux = (wp * qp).sum(-1) + (wm * qm).sum(-1)
        u_next = u + dt * ((-inv_dx) * (flux[..., 1:] - flux[..., :-1]))

        ap = _weno_weights(_betas(sp), spec.eps, spec.p)
        am = _weno_weights(_betas(sm), spec.eps, spec.p)
        flux_a = (ap * qp).sum(-1) + (am * qm).sum(-1)
        u_anchor = u + dt * ((-inv_dx) * (flux_a[..., 1:]
                                          - flux_a[..., :-1]))

        d = np.abs(u_next - u_anchor)
        r = np.empty((b, c_comp, n + 1), dtype=dtype)
        r[..., 0] = -1.0 * d[..., 0]
        r[..., n] = -1.0 * d[..., n - 1]
        r[..., 1:n] = (-0.5) * d[..., :-1] + (-0.5) * d[..., 1:]
        if c_comp == 1:
            r_if = r[:, 0]
        else:
            third = 1.0 / 3.0
            r_if = third * r[:, 0] + third * r[:, 1] + third * r[:, 2]
        # left-to-right accumulation, matching the tape's grouped sums
        total += np.cumsum(r_if, axis=-1)[:, -1]
        u = u_next

    if not np.all(np.isfinite(total)):
        raise FloatingPointError("objective became non-finite; the check "
                                 "needs a stable episode")
    return total


# --------------------------------------------------------------- the check

@dataclass
class GradCheckResult:
    """Outcome of one gradient check at one parameter point."""

    n_params: int
    n_checked: int
    n_exact: int            # coordinates with a bitwise-zero difference
    n_retried: int          # coordinates re-evaluated in extended precision
    hidden_flat: bool       # hidden block settled by the zero-head invariance
    max_rel_error: float    # over coordinates above the absolute floor
    worst_coord: int
    rel_tol: float
    abs_floor: float
    h: float
    objective: float
    objective_gap: float    # |tape objective - plain evaluator objective|
    elapsed: float
    failures: list = field(default_factory=list)
    block_worst: dict = field(default_factory=dict)  # block -> (coord, rel)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error < self.rel_tol

    def summary(self) -> str:
        word = "PASS" if self.passed else "FAIL"
        return (f"{word}: {self.n_checked} coords, max rel error "
                f"{self.max_rel_error:.3e} (tol {self.rel_tol:g}, floor "
                f"{self.abs_floor:g}), {self.n_retried} retried in extended "
                f"precision, {len(self.failures)} failed, "
                f"{self.elapsed:.1f}s")


def default_case(seed: int, n_cells: int = 16, T: int = 5,
                 dt: float = 0.0004, system: str = "burgers"):
    """A seeded (spec, u0, theta) triple suited to finite differencing.

    The initial profile is a random mixture of sine modes: smooth but free
    of the symmetries that put max-reductions exactly on their kinks.
    """
    rng = np.random.default_rng(seed)
    boundary = "periodic" if system == "burgers" else "outflow"
    spec = EnvSpec(system, Grid(n_cells, boundary=boundary), T, dt=dt)
    x = (np.arange(n_cells) + 0.5) / n_cells
    prof = 0.8 + 0.1 * rng.normal()
    for k in (1, 2, 3):
        prof = prof + rng.uniform(0.1, 0.3) * np.sin(
            2 * np.pi * k * x + rng.uniform(0, 2 * np.pi))
    if system == "burgers":
        u0 = prof[None, :]
    else:
        from .weno import euler_conserved
        rho = 1.0 + 0.2 * np.sin(2 * np.pi * x + 0.37)
        pres = 1.0 + 0.2 * np.sin(4 * np.pi * x + 1.11)
        u0 = euler_conserved(rho, 0.25 * prof, pres)
    return spec, u0, init_params(seed)


def _fd_batch(theta: np.ndarray, coords: np.ndarray, h: float,
              spec: EnvSpec, u0: np.ndarray, dtype, batch: int):
    """Central differences for the listed coordinates, (len(coords),)."""
    fd = np.empty(coords.size, dtype=dtype)
    base = np.asarray(theta, dtype=dtype)
    for lo in range(0, coords.size, batch):
        idx = coords[lo:lo + batch]
        probe = np.broadcast_to(base, (idx.size, N_PARAMS)).copy()
        rows = np.arange(idx.size)
        probe[rows, idx] += dtype(h)
        plus = batched_objective(probe, spec, u0, dtype)
        probe[rows, idx] = base[idx] - dtype(h)
        minus = batched_objective(probe, spec, u0, dtype)
        fd[lo:lo + idx.size] = (plus - minus) / dtype(2 * h)
    return fd


def _hidden_block_is_flat(theta: np.ndarray, hidden: np.ndarray, h: float,
                          spec: EnvSpec, u0: np.ndarray,
                          n_random: int = 8, group: int = 512) -> bool:
    """Whether the objective is bitwise constant along hidden coordinates.

    When the output layer of theta is exactly zero, the policy logits are
    0 * a2 + 0 regardless of the hidden activations, so any perturbation
    confined to hidden coordinates leaves every logit -- and therefore the
    whole episode -- bitwise unchanged. This verifies that flatness
    empirically: probes along contiguous coordinate groups (covering every
    hidden coordinate) and random sign patterns must reproduce the base
    objective exactly. If they do, the per-coordinate central differences
    on the hidden block are 0 by the same invariance.
    """
    base = batched_objective(theta[None], spec, u0)[0]
    probes = []
    for lo in range(0, hidden.size, group):
        v = np.zeros(N_PARAMS)
        v[hidden[lo:lo + group]] = h
        probes.append(v)
    rng = np.random.default_rng(0)
    for _ in range(n_random):
        v = np.zeros(N_PARAMS)
        v[hidden] = h * rng.choice([-1.0, 1.0], size=hidden.size)
        probes.append(v)
    probes = np.asarray(probes)
    both = np.concatenate([theta + probes, theta - probes])
    vals = batched_objective(both, spec, u0)
    return bool(np.all(vals == base))


def check_gradient(spec: EnvSpec, u0: np.ndarray, theta: np.ndarray, *,
                   h: float = DEFAULT_H, rel_tol: float = DEFAULT_REL_TOL,
                   abs_floor: float = DEFAULT_ABS_FLOOR,
                   coords: np.ndarray | None = None,
                   batch: int = 512, precise_batch: int = 32,
                   backend: str | None = None) -> GradCheckResult:
    """Compare the tape gradient against central differences coordinatewise.

    A coordinate passes when |fd - g| <= abs_floor, or when the relative
    error |fd - g| / max(|fd|, |g|) stays under rel_tol. Coordinates whose
    float64 sweep result is not clear of the tolerance by a factor of 20
    are retried with the objective evaluated in numpy longdouble before
    being judged. At a parameter point whose output layer is exactly zero,
    hidden coordinates are settled by the flat-block invariance (their
    central differences are bitwise zero) once group probes confirm it,
    and the per-coordinate budget is spent on the output layer.
    """
    t0 = time.perf_counter()
    theta = np.asarray(theta, dtype=np.float64).ravel()
    r = rollout(spec, u0, theta, policy="net", record=True, backend=backend)
    if r.blown_up:
        raise FloatingPointError("the episode blew up; gradients cannot be "
                                 "finite-differenced here")
    g = r.gradient()
    plain = float(batched_objective(theta[None], spec, u0)[0])
    objective_gap = abs(r.total_reward - plain)

    if coords is None:
        coords = np.arange(N_PARAMS)
    coords = np.asarray(coords, dtype=np.int64)
    fd = np.zeros(coords.size)

    hid_mask = coords < _HEAD_START
    hidden_flat = False
    if hid_mask.any() and not np.any(theta[_HEAD_START:]):
        hidden_flat = _hidden_block_is_flat(theta, coords[hid_mask], h,
                                            spec, u0)
    probe_mask = ~hid_mask if hidden_flat else np.ones(coords.size, bool)

    n_retried = 0
    if probe_mask.any():
        sub = coords[probe_mask]
        fd_sub = _fd_batch(theta, sub, h, spec, u0, np.float64, batch)
        d = np.abs(fd_sub - g[sub])
        s = np.maximum(np.abs(fd_sub), np.abs(g[sub]))
        bad = (d > abs_floor) & (d > (rel_tol / 20.0) * s)
        n_retried = int(bad.sum())
        if n_retried:
            fd_ld = _fd_batch(theta, sub[bad], h, spec, u0, np.longdouble,
                              precise_batch)
            fd_sub[bad] = fd_ld.astype(np.float64)
        fd[probe_mask] = fd_sub

    diff = np.abs(fd - g[coords])
    scale = np.maximum(np.abs(fd), np.abs(g[coords]))
    above = diff > abs_floor
    rel = np.zeros_like(diff)
    rel[above] = diff[above] / scale[above]
    worst = int(np.argmax(rel))
    failures = [
        (int(coords[i]), float(g[coords[i]]), float(fd[i]), float(diff[i]))
        for i in np.nonzero(above & (rel >= rel_tol))[0]
    ]
    block_worst: dict = {}
    for i, coord in enumerate(coords):
        name = block_of(int(coord))
        if name not in block_worst or rel[i] > block_worst[name][1]:
            block_worst[name] = (int(coord), float(rel[i]))
    return GradCheckResult(
        n_params=N_PARAMS,
        n_checked=int(coords.size),
        n_exact=int((diff == 0.0).sum()),
        n_retried=n_retried,
        hidden_flat=hidden_flat,
        max_rel_error=float(rel[worst]),
        worst_coord=int(coords[worst]),
        rel_tol=rel_tol,
        abs_floor=abs_floor,
        h=h,
        objective=float(r.total_reward),
        objective_gap=float(objective_gap),
        elapsed=time.perf_counter() - t0,
        failures=failures,
        block_worst=block_worst,
    )


def directional_check(spec: EnvSpec, u0: np.ndarray, theta: np.ndarray, *,
                      n_directions: int = 3, seed: int = 0,
                      h: float = DEFAULT_H, rel_tol: float = DEFAULT_REL_TOL,
                      abs_floor: float = DEFAULT_ABS_FLOOR,
                      backend: str | None = None):
    """Directional derivatives g.v against FD along random unit directions.

    One direction touches every parameter at once, so this exercises
    backpropagation through all layers even where coordinatewise
    differencing would be too expensive; used with parameter points whose
    output head is nonzero.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    r = rollout(spec, u0, theta, policy="net", record=True, backend=backend)
    g = r.gradient()
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(n_directions):
        v = rng.normal(size=N_PARAMS)
        v /= np.linalg.norm(v)
        probe = np.stack([theta + h * v, theta - h * v])
        plus, minus = batched_objective(probe, spec, u0, np.longdouble)
        fd = float((plus - minus) / np.longdouble(2 * h))
        dot = float(g @ v)
        diff = abs(fd - dot)
        ok = diff <= abs_floor or diff <= rel_tol * max(abs(fd), abs(dot))
        results.append((dot, fd, diff, ok))
    return results
