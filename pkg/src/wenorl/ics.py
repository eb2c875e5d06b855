"""Initial conditions for the Burgers and Euler test problems.

Each IC carries its own domain, boundary rule, and evaluation horizon, and
evaluates to conserved-variable cell values on a grid's cell centers. The
three random families redraw their shape constants per sample; draws record
the constants in ``params`` so runs can be reproduced from logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid
from .weno import euler_conserved

# standing shock forms at t = 1/(2 pi A) = 0.1, inside every eval horizon
STANDING_SINE_AMPLITUDE = 1.0 / (0.2 * np.pi)


@dataclass(frozen=True)
class ICSpec:
    """One initial condition: profile, domain, boundary, and horizon."""

    name: str
    system: str
    boundary: str
    x_min: float
    x_max: float
    t_max: float
    profile: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def grid(self, n_cells: int) -> Grid:
        return Grid(n_cells, self.x_min, self.x_max, self.boundary)

    def evaluate(self, grid: Grid) -> np.ndarray:
        """Conserved components (C, n_cells) at the grid's cell centers."""
        u = np.atleast_2d(self.profile(grid.centers()))
        return np.asarray(u, dtype=np.float64)


def _burgers(name, profile, boundary, t_max=0.2, **params) -> ICSpec:
    return ICSpec(name, "burgers", boundary, 0.0, 1.0, t_max, profile,
                  dict(params))


def standing_sine(amplitude: float = STANDING_SINE_AMPLITUDE) -> ICSpec:
    return _burgers("standing_sine",
                    lambda x: amplitude * np.sin(2 * np.pi * x),
                    "periodic", amplitude=amplitude)


def rarefaction() -> ICSpec:
    return _burgers("rarefaction",
                    lambda x: np.where(x <= 0.5, 1.0, 2.0), "outflow")


def accelerating_shock() -> ICSpec:
    return _burgers("accelerating_shock",
                    lambda x: np.where(x <= 0.25, 3.0, 3.0 * (x - 1.0)),
                    "outflow")


def double_sine() -> ICSpec:
    return _burgers("double_sine",
                    lambda x: 0.25 + 0.5 * np.sin(4 * np.pi * x), "periodic")


def gaussian() -> ICSpec:
    return _burgers("gaussian",
                    lambda x: 1.0 + np.exp(-60.0 * (x - 0.5) ** 2), "outflow")


def tophat() -> ICSpec:
    return _burgers("tophat",
                    lambda x: np.where((x > 1 / 3) & (x < 2 / 3), 1.0, 0.0),
                    "outflow")


def _shock_tube(name, left, right, x_min=-0.5, x_max=0.5, t_max=0.2) -> ICSpec:
    rho_l, u_l, p_l = left
    rho_r, u_r, p_r = right
    mid = 0.5 * (x_min + x_max)

    def profile(x):
        on_left = x <= mid
        return euler_conserved(np.where(on_left, rho_l, rho_r),
                               np.where(on_left, u_l, u_r),
                               np.where(on_left, p_l, p_r))

    return ICSpec(name, "euler", "outflow", x_min, x_max, t_max, profile,
                  {"left": tuple(left), "right": tuple(right)})


def sod() -> ICSpec:
    return _shock_tube("sod", (1.0, 0.0, 1.0), (0.125, 0.0, 0.1))


def sod2() -> ICSpec:
    return _shock_tube("sod2", (1.0, 0.0, 1.0), (0.01, 0.0, 0.01))


def lax() -> ICSpec:
    return _shock_tube("lax", (0.445, 0.689, 3.528), (0.5, 0.0, 0.571),
                       t_max=0.14)


def sonic_rarefaction() -> ICSpec:
    return _shock_tube("sonic_rarefaction", (3.857, 0.92, 10.333),
                       (1.0, 3.55, 1.0), x_min=-5.0, x_max=5.0, t_max=0.7)


BURGERS_ICS = {"standing_sine": standing_sine, "rarefaction": rarefaction,
               "accelerating_shock": accelerating_shock,
               "double_sine": double_sine, "gaussian": gaussian,
               "tophat": tophat}
EULER_ICS = {"sod": sod, "sod2": sod2, "lax": lax,
             "sonic_rarefaction": sonic_rarefaction}
NAMED_ICS = {**BURGERS_ICS, **EULER_ICS}


def named_ic(name: str) -> ICSpec:
    try:
        return NAMED_ICS[name]()
    except KeyError:
        raise KeyError(f"unknown initial condition {name!r}; known: "
                       f"{sorted(NAMED_ICS)}") from None


# ------------------------------------------------------------ random draws

RANDOM_FAMILIES = ("random_sine", "random_shock", "random_rarefaction")


def sample_random_sine(rng: np.random.Generator) -> ICSpec:
    # a uniform over [-1,-0.2] U [0.2,1]: magnitude then sign
    a = rng.uniform(0.2, 1.0) * (1.0 if rng.random() < 0.5 else -1.0)
    k = float(rng.choice([2, 4, 6, 8, 10]))
    return _burgers("random_sine",
                    lambda x: 3.5 - abs(a) + a * np.sin(k * np.pi * x),
                    "periodic", a=a, k=k)


def sample_random_shock(rng: np.random.Generator) -> ICSpec:
    c = rng.uniform(0.5, 5.0)
    a = rng.uniform(0.0, 5.0)
    phi = rng.uniform(0.0, 0.5)
    return _burgers("random_shock",
                    lambda x: np.where(x <= phi, c, a * (x - 1.0)),
                    "outflow", c=c, a=a, phi=phi)


def sample_random_rarefaction(rng: np.random.Generator) -> ICSpec:
    c = rng.uniform(-1.0, 1.0)
    a = rng.uniform(0.25, 1.5)
    b = rng.uniform(20.0, 100.0)
    return _burgers("random_rarefaction",
                    lambda x: c + a * np.tanh(b * (x - 0.5)),
                    "outflow", c=c, a=a, b=b)


_SAMPLERS = {"random_sine": sample_random_sine,
             "random_shock": sample_random_shock,
             "random_rarefaction": sample_random_rarefaction}


def sample_random_env(rng: np.random.Generator,
                      family: str | None = None) -> ICSpec:
    """One random Burgers IC; the family is drawn uniformly unless given."""
    if family is None:
        family = RANDOM_FAMILIES[rng.integers(len(RANDOM_FAMILIES))]
    return _SAMPLERS[family](rng)


def sample_random_envs(count: int, rng: np.random.Generator) -> list[ICSpec]:
    """A batch cycling through the families, so counts divisible by three
    split exactly evenly (1200 draws give 400 per family)."""
    return [sample_random_env(rng, RANDOM_FAMILIES[i % 3])
            for i in range(count)]


def sample_resolution(rng: np.random.Generator) -> int:
    """Grid size 64..1024, uniform in log2."""
    return int(round(2.0 ** rng.uniform(6.0, 10.0)))
