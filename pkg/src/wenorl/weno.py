"""Fifth-order WENO building blocks and the monolithic baseline solver.

All pieces are plain numpy, vectorized over interfaces, and written in a
fixed evaluation order (left-to-right linear combinations, explicit
multiply-by-reciprocal). The tape recorder in envs.py mirrors the same order
op for op, so a recorded rollout reproduces this solver bit for bit when the
policy emits the standard weights.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, ghost_map

GAMMA_DEFAULT = 1.4
WENO_EPS = 1e-6
WENO_P = 2
WENO_D = np.array([0.1, 0.6, 0.3])
ONE_SIXTH = 1.0 / 6.0
C13_12 = 13.0 / 12.0
STENCIL_WIDTH = 5
GHOST = 3


class BlowupError(RuntimeError):
    """The discrete solution left the physical domain (NaN/Inf or rho,p <= 0)."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


# ----------------------------------------------------------------- physics

def physical_flux(u: np.ndarray, system: str,
                  gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    """Flux of the conserved components, shape preserved ((C, N) in and out)."""
    if system == "burgers":
        return 0.5 * (u * u)
    if system == "euler":
        r, m, et = u
        vel = m / r
        ke = 0.5 * (m * vel)
        pres = (gamma - 1.0) * (et - ke)
        f = np.empty_like(u)
        f[0] = m
        f[1] = m * vel + pres
        f[2] = vel * (et + pres)
        return f
    raise ValueError(f"unknown system {system!r}")


def max_wavespeed(u: np.ndarray, system: str,
                  gamma: float = GAMMA_DEFAULT) -> float:
    """Largest characteristic speed over the grid (the LF split constant)."""
    u = np.atleast_2d(u)
    if system == "burgers":
        return float(np.max(np.abs(u[0]))) if u.size else 0.0
    if system == "euler":
        r, m, et = u
        vel = m / r
        ke = 0.5 * (m * vel)
        pres = (gamma - 1.0) * (et - ke)
        c = np.sqrt(gamma * pres / r)
        return float(np.max(np.abs(vel) + c))
    raise ValueError(f"unknown system {system!r}")


def euler_primitive(u: np.ndarray, gamma: float = GAMMA_DEFAULT):
    """(rho, velocity, pressure) from conserved (rho, momentum, energy)."""
    r, m, et = np.atleast_2d(u) if u.ndim == 1 else u
    vel = m / r
    ke = 0.5 * (m * vel)
    pres = (gamma - 1.0) * (et - ke)
    return r, vel, pres


def euler_conserved(rho, vel, pres, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    """Conserved (rho, momentum, energy) rows from primitive variables."""
    rho = np.asarray(rho, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    pres = np.asarray(pres, dtype=np.float64)
    m = rho * vel
    et = pres / (gamma - 1.0) + 0.5 * (m * vel)
    return np.stack([rho, m, et])


def lax_friedrichs_split(f: np.ndarray, u: np.ndarray, alpha: float):
    """Global LF flux splitting: f+- = 0.5 (f +- alpha u), both upwind-safe."""
    au = alpha * u
    return 0.5 * (f + au), 0.5 * (f - au)


# ----------------------------------------------------------- reconstruction

def stencil_maps(n_cells: int, boundary: str):
    """Cell indices feeding each interface's plus and minus stencils.

    Interface i (0..n_cells) sits at x_min + i*dx between cells i-1 and i.
    The plus stencil reads cells {i-3..i+1}; the minus stencil reads
    {i+2..i-2} mirrored so one reconstruction formula serves both signs.
    Ghost cells are resolved through the boundary rule.
    """
    gm = ghost_map(n_cells, boundary, GHOST)
    i = np.arange(n_cells + 1)[:, None]
    k = np.arange(STENCIL_WIDTH)[None, :]
    return gm[i + k], gm[i + 5 - k]


def interface_stencils(f_plus: np.ndarray, f_minus: np.ndarray,
                       boundary: str):
    """(n+1, 5) stencil-value rows for both split fluxes of one component."""
    pm, mm = stencil_maps(f_plus.shape[-1], boundary)
    return f_plus[pm], f_minus[mm]


def smoothness_indicators(s: np.ndarray) -> np.ndarray:
    """Jiang-Shu indicators beta_0..2 for stencil rows s (..., 5)."""
    s = np.asarray(s, dtype=np.float64)
    s0, s1, s2, s3, s4 = (s[..., k] for k in range(5))
    a0 = s0 - 2.0 * s1 + s2
    b0 = s0 - 4.0 * s1 + 3.0 * s2
    a1 = s1 - 2.0 * s2 + s3
    b1 = s1 - s3
    a2 = s2 - 2.0 * s3 + s4
    b2 = 3.0 * s2 - 4.0 * s3 + s4
    return np.stack([C13_12 * (a0 * a0) + 0.25 * (b0 * b0),
                     C13_12 * (a1 * a1) + 0.25 * (b1 * b1),
                     C13_12 * (a2 * a2) + 0.25 * (b2 * b2)], axis=-1)


def substencil_reconstruct(s: np.ndarray) -> np.ndarray:
    """The three third-order interface reconstructions of each stencil row."""
    s = np.asarray(s, dtype=np.float64)
    s0, s1, s2, s3, s4 = (s[..., k] for k in range(5))
    q0 = (2.0 * s0 - 7.0 * s1 + 11.0 * s2) * ONE_SIXTH
    q1 = (-1.0 * s1 + 5.0 * s2 + 2.0 * s3) * ONE_SIXTH
    q2 = (2.0 * s2 + 5.0 * s3 - 1.0 * s4) * ONE_SIXTH
    return np.stack([q0, q1, q2], axis=-1)


def standard_weno_weights(betas: np.ndarray, eps: float = WENO_EPS,
                          p: int = WENO_P) -> np.ndarray:
    """Normalized nonlinear weights alpha_k / sum, alpha_k = d_k/(eps+beta_k)^p."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if p < 1 or int(p) != p:
        raise ValueError("p must be a positive integer")
    t = betas + eps
    pw = t
    for _ in range(int(p) - 1):
        pw = pw * t
    al = WENO_D / pw
    s = al[..., 0] + al[..., 1] + al[..., 2]
    return al / s[..., None]


def weighted_interface_flux(weights: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Convex combination of the sub-stencil reconstructions of one side."""
    q = substencil_reconstruct(s)
    return (weights[..., 0] * q[..., 0] + weights[..., 1] * q[..., 1]
            + weights[..., 2] * q[..., 2])


def weno_side_flux(s: np.ndarray, eps: float = WENO_EPS,
                   p: int = WENO_P) -> np.ndarray:
    """One side's WENO flux: standard weights applied to its stencil rows."""
    w = standard_weno_weights(smoothness_indicators(s), eps, p)
    return weighted_interface_flux(w, s)


# ------------------------------------------------------------------ solver

def interface_fluxes(u: np.ndarray, grid: Grid, system: str,
                     gamma: float = GAMMA_DEFAULT, eps: float = WENO_EPS,
                     p: int = WENO_P) -> np.ndarray:
    """All n_cells+1 interface fluxes, (C, n+1), with standard WENO weights."""
    u = np.atleast_2d(u)
    f = physical_flux(u, system, gamma)
    alpha = max_wavespeed(u, system, gamma)
    fp, fm = lax_friedrichs_split(f, u, alpha)
    pm, mm = stencil_maps(grid.n_cells, grid.boundary)
    flux = np.empty((u.shape[0], grid.n_cells + 1))
    for c in range(u.shape[0]):
        flux[c] = weno_side_flux(fp[c][pm], eps, p) \
            + weno_side_flux(fm[c][mm], eps, p)
    return flux


def monolithic_step(u: np.ndarray, dt: float, grid: Grid, system: str,
                    gamma: float = GAMMA_DEFAULT, eps: float = WENO_EPS,
                    p: int = WENO_P) -> np.ndarray:
    """One forward-Euler step of the baseline WENO scheme."""
    u = np.atleast_2d(u)
    flux = interface_fluxes(u, grid, system, gamma, eps, p)
    inv_dx = 1.0 / grid.dx
    df = flux[:, 1:] - flux[:, :-1]
    rhs = (-inv_dx) * df
    return u + dt * rhs


def check_physical(u: np.ndarray, system: str, gamma: float = GAMMA_DEFAULT,
                   step=None, time=None) -> None:
    """Raise BlowupError on NaN/Inf (any system) or rho,p <= 0 (Euler)."""
    if not np.all(np.isfinite(u)):
        raise BlowupError("non-finite solution values", step=step, time=time)
    if system == "euler":
        r, _, pres = euler_primitive(np.atleast_2d(u), gamma)
        if np.any(r <= 0.0) or np.any(pres <= 0.0):
            raise BlowupError("non-positive density or pressure",
                              step=step, time=time)


def solve(u0: np.ndarray, grid: Grid, system: str, times, *,
          dt: float | None = None, cfl: float | None = None,
          gamma: float = GAMMA_DEFAULT, eps: float = WENO_EPS,
          p: int = WENO_P, max_steps: int = 10_000_000) -> np.ndarray:
    """March the baseline scheme to each requested time (ascending).

    Either a fixed ``dt`` or a CFL number must be given; the step is clipped
    to land exactly on every output time. Returns (len(times), C, n_cells).
    """
    if (dt is None) == (cfl is None):
        raise ValueError("give exactly one of dt or cfl")
    u = np.atleast_2d(np.asarray(u0, dtype=np.float64)).copy()
    t = 0.0
    out = np.empty((len(times), u.shape[0], u.shape[1]))
    nstep = 0
    for j, target in enumerate(times):
        if target < t - 1e-12:
            raise ValueError("output times must be ascending")
        while t < target * (1.0 - 1e-14) or (target == 0.0 and t < 0.0):
            if dt is not None:
                step_dt = dt
            else:
                alpha = max_wavespeed(u, system, gamma)
                step_dt = cfl * grid.dx / alpha if alpha > 0 else target - t
            step_dt = min(step_dt, target - t)
            u = monolithic_step(u, step_dt, grid, system, gamma, eps, p)
            t += step_dt
            nstep += 1
            check_physical(u, system, gamma, step=nstep, time=t)
            if nstep > max_steps:
                raise RuntimeError("step budget exhausted before t_end")
        out[j] = u
    return out
