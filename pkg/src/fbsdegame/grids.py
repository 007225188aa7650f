"""Time and space grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError(f"time grid needs t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) < 1:
            raise ValueError(f"n_steps must be positive, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def time(self, k: int) -> float:
        return self.t0 + self.dt * k

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * factor)


@dataclass(frozen=True)
class SpaceGrid:
    x_min: float
    x_max: float
    n_nodes: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError(f"space grid needs x_min < x_max, got {self.x_min}, {self.x_max}")
        if int(self.n_nodes) < 3:
            raise ValueError(f"n_nodes must be at least 3, got {self.n_nodes}")
        object.__setattr__(self, "n_nodes", int(self.n_nodes))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_nodes - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_nodes)

    def interior(self, fraction: float = 0.1) -> np.ndarray:
        """Boolean mask dropping ``fraction`` of the nodes at each edge."""
        cut = int(np.floor(fraction * self.n_nodes))
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[cut:self.n_nodes - cut] = True
        return mask


@dataclass(frozen=True)
class ControlGrid:
    """Finite control sets for the maximising (U) and minimising (V) player."""

    U_values: tuple[float, ...] = (0.0,)
    V_values: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        u = tuple(float(a) for a in self.U_values)
        v = tuple(float(a) for a in self.V_values)
        if not u or not v:
            raise ValueError("control sets must be non-empty")
        if not all(np.isfinite(u)) or not all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "U_values", u)
        object.__setattr__(self, "V_values", v)

    @property
    def pairs(self):
        return [(a, b) for a in self.U_values for b in self.V_values]

    @property
    def singleton(self) -> bool:
        return len(self.U_values) == 1 and len(self.V_values) == 1
