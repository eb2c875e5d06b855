"""Uniform 1-D finite-volume grid, ghost cells, and the error norm."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARIES = ("periodic", "outflow")


@dataclass(frozen=True)
class Grid:
    """Uniform grid of cells over [x_min, x_max] with a boundary rule."""

    n_cells: int
    x_min: float = 0.0
    x_max: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be positive")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    def interfaces(self) -> np.ndarray:
        """The n_cells+1 interface positions, both domain edges included."""
        return self.x_min + np.arange(self.n_cells + 1) * self.dx


def ghost_map(n_cells: int, boundary: str, width: int) -> np.ndarray:
    """Interior cell index for each position of the ghost-extended array.

    Position e of the
    extended array corresponds to cell e-width; periodic grids wrap it,
    outflow grids repeat the outermost cells.
    """
    if width < 0:
        raise ValueError("ghost width must be nonnegative")
    if width > n_cells:
        raise ValueError(f"ghost width {width} exceeds the grid "
                         f"({n_cells} cells)")
    cells = np.arange(-width, n_cells + width)
    if boundary == "periodic":
        return np.mod(cells, n_cells)
    if boundary == "outflow":
        return np.clip(cells, 0, n_cells - 1)
    raise ValueError(f"boundary must be one of {BOUNDARIES}")


def ghost_extend(u: np.ndarray, boundary: str, width: int) -> np.ndarray:
    """Pad the last axis with ghost cells per the boundary rule."""
    u = np.asarray(u)
    return u[..., ghost_map(u.shape[-1], boundary, width)]


@dataclass
class FieldState:
    """Solution snapshot: one row of cell averages per conserved component."""

    u: np.ndarray     # (n_components, n_cells)
    t: float = 0.0

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))

    @property
    def n_components(self) -> int:
        return self.u.shape[0]

    @property
    def n_cells(self) -> int:
        return self.u.shape[1]

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.t)


def l2_error(a: np.ndarray, b: np.ndarray, dx: float) -> float:
    """dx-weighted l2 difference, summed over components.

    Per component: sqrt(dx * sum((a - b)^2)). Multi-component inputs return
    the sum of the per-component norms, so a gas-dynamics error counts the
    density, momentum, and energy mismatches in full rather than diluting
    them by the component count. Single-component inputs are unaffected.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    per_comp = np.sqrt(dx * np.sum((a - b) ** 2, axis=1))
    return float(np.sum(per_comp))
