"""Driving noise, finite-activity Lévy models and the Markov-chain stencil.

The stencil is the one-step transition of a chain on the space grid whose
increments reproduce the first two moments of the controlled forward
dynamics ``dX = b dt + sigma dB + sum_i h_i (dN_i - lambda_i dt)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .expr import Expression, parse_expression
from .grids import SpaceGrid, TimeGrid

RNG_NAME = "Philox"
INVARIANTS = ("stencil_moments", "path_laws")

__all__ = [
    "CFLError", "LevyModel", "PathBundle", "Stencil", "TimeGrid", "SpaceGrid",
    "discretize_levy", "make_rng", "markov_stencil", "sample_paths",
]


class CFLError(ValueError):
    """Step too large for a nonnegative stencil; carries a suggested step."""

    def __init__(self, message: str, suggested_dt: float):
        self.suggested_dt = suggested_dt
        super().__init__(f"{message}; try dt <= {suggested_dt:.6g}")


@dataclass(frozen=True)
class LevyModel:
    atoms: tuple[float, ...] = ()
    intensities: tuple[float, ...] = ()
    l_values: tuple[float, ...] = ()
    C: float = 1.0

    def __post_init__(self):
        a = tuple(float(v) for v in self.atoms)
        lam = tuple(float(v) for v in self.intensities)
        lv = tuple(float(v) for v in self.l_values) if self.l_values else (0.0,) * len(a)
        if not (len(a) == len(lam) == len(lv)):
            raise ValueError("atoms, intensities and l values must have equal length")
        if any(e == 0.0 for e in a):
            raise ValueError("Lévy atoms must be nonzero")
        if len(set(a)) != len(a):
            raise ValueError("Lévy atoms must be pairwise distinct")
        if any(not (x > 0.0) for x in lam):
            raise ValueError("intensities must be positive")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "intensities", lam)
        object.__setattr__(self, "l_values", lv)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

    @property
    def e(self) -> np.ndarray:
        return np.asarray(self.atoms, dtype=float)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)

    @property
    def l(self) -> np.ndarray:
        return np.asarray(self.l_values, dtype=float)

    @property
    def small_jump_mass(self) -> float:
        """sum lambda_i min(1, e_i^2); finite for any atom model."""
        return float(np.sum(self.lam * np.minimum(1.0, self.e ** 2)))


def discretize_levy(atom_spec, l_expr: Expression | str, C: float = 1.0) -> LevyModel:
    """Build a :class:`LevyModel` from ``(e_i, lambda_i)`` pairs.

    ``l`` is evaluated on each atom and checked against ``0 <= l(e) <= C min(1, |e|)``.
    """
    if isinstance(l_expr, str):
        l_expr = parse_expression(l_expr, allowed={"e"})
    atoms, lam = [], []
    for e, rate in atom_spec:
        if e == 0:
            raise ValueError("Lévy atoms must be nonzero")
        if not rate > 0:
            raise ValueError(f"intensity of atom {e} must be positive, got {rate}")
        atoms.append(float(e))
        lam.append(float(rate))
    lv = []
    for e in atoms:
        val = l_expr(e=e)
        bound = C * min(1.0, abs(e))
        if val < 0.0 or val > bound + 1e-15:
            raise ValueError(f"l({e:g})={val:g} outside [0, C*min(1,|e|)] = [0, {bound:g}] at atom e={e:g}")
        lv.append(val)
    return LevyModel(tuple(atoms), tuple(lam), tuple(lv), float(C))


# --- paths -------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class PathBundle:
    n_paths: int
    brownian_increments: np.ndarray
    jump_counts: np.ndarray
    seed: int
    dt: float
    generator: str = RNG_NAME

    def compensated_jumps(self, atoms: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Per step sum_i e_i (N_i - lambda_i dt), shape [path, step]."""
        if self.jump_counts.shape[2] == 0:
            return np.zeros(self.brownian_increments.shape)
        return (self.jump_counts - lam * self.dt) @ atoms


def sample_paths(grid: TimeGrid, levy: LevyModel, n_paths: int, seed: int) -> PathBundle:
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    rng = make_rng(seed)
    dt = grid.dt
    dB = rng.standard_normal((n_paths, grid.n_steps)) * np.sqrt(dt)
    if levy.n_atoms:
        counts = rng.poisson(levy.lam * dt, size=(n_paths, grid.n_steps, levy.n_atoms))
    else:
        counts = np.zeros((n_paths, grid.n_steps, 0), dtype=np.int64)
    dB.setflags(write=False)
    counts.setflags(write=False)
    return PathBundle(int(n_paths), dB, counts, int(seed), dt)


# --- Markov-chain stencil ----------------------------------------------------


@dataclass(frozen=True)
class Stencil:
    """One-step transition weights for every node of a space grid.

    The diffusion part sits on three consecutive nodes ``idx`` with weights
    ``w`` (total mass ``1 - dt * sum(lambda)``); atom ``i`` moves node ``j``
    to position ``jlo + jfrac`` with weight ``jw[i] = lambda_i dt``.
    """

    x_min: float
    dx: float
    idx: np.ndarray
    w: np.ndarray
    jlo: np.ndarray
    jfrac: np.ndarray
    jw: np.ndarray
    leak: np.ndarray
    inflated: np.ndarray
    margin: np.ndarray = field(repr=False)
    vol: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.idx.shape[0]

    def expect(self, y: np.ndarray) -> np.ndarray:
        """Conditional expectation of ``y`` at the next slice."""
        return _kernels.apply_stencil(y, self.idx, self.w, self.jlo, self.jfrac, self.jw)

    def jump_values(self, y: np.ndarray) -> np.ndarray:
        """``y`` at the post-jump positions, shape [node, atom]."""
        if self.jw.size == 0:
            return np.zeros((self.n_nodes, 0))
        return _kernels.gather(y, self.jlo, self.jfrac)

    def slope(self, y: np.ndarray) -> np.ndarray:
        """Regression slope of ``y`` on the diffusion displacement."""
        return _kernels.regression_slope(y, self.x_min, self.dx, self.idx, self.w)

    def z_component(self, y: np.ndarray) -> np.ndarray:
        """Brownian integrand: volatility times the regression slope."""
        if self.vol is None:
            return np.zeros(self.n_nodes)
        return self.vol * self.slope(y)

    def dense(self) -> np.ndarray:
        """Full transition matrix; small grids only (tests, diagnostics)."""
        n = self.n_nodes
        P = np.zeros((n, n))
        rows = np.repeat(np.arange(n), 3)
        np.add.at(P, (rows, self.idx.ravel()), self.w.ravel())
        for i in range(self.jw.size):
            np.add.at(P, (np.arange(n), self.jlo[:, i]), self.jw[i] * (1.0 - self.jfrac[:, i]))
            np.add.at(P, (np.arange(n), self.jlo[:, i] + 1), self.jw[i] * self.jfrac[:, i])
        return P


def _per_node(value, n):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"expected scalar or array of shape ({n},), got {arr.shape}")
    return arr


def markov_stencil(grid: TimeGrid | float, space: SpaceGrid, levy: LevyModel,
                   drift, vol, shifts=None) -> Stencil:
    """Moment-matched transition weights for one step of size ``grid.dt``.

    ``drift`` and ``vol`` are scalars or per-node arrays. ``shifts`` are the
    jump displacements per node and atom (default: the atoms themselves).
    Raises :class:`CFLError` when some weight would be negative.
    """
    dt = grid.dt if isinstance(grid, TimeGrid) else float(grid)
    n, dx = space.n_nodes, space.dx
    b = _per_node(drift, n)
    s = _per_node(vol, n)
    a = levy.n_atoms
    if shifts is None:
        sh = np.broadcast_to(levy.e, (n, a))
    else:
        sh = np.broadcast_to(np.asarray(shifts, dtype=float), (n, a))
    lam = levy.lam
    rate = float(np.max(s * s)) / (dx * dx) + float(np.max(np.abs(b))) / dx + levy.total_intensity
    if dt * (float(np.max(s * s)) / (dx * dx) + levy.total_intensity) > 1.0 + 1e-12:
        raise CFLError(
            f"CFL violated: dt*(max vol^2/dx^2 + sum lambda) = "
            f"{dt * (float(np.max(s * s)) / dx**2 + levy.total_intensity):.6g} > 1", 0.9 / rate)
    idx, w, jlo, jfrac, leak, inflated, margin = _kernels.build_stencil(
        space.x_min, dx, n, dt, b, s, sh, lam)
    if margin.min() < -1e-12:
        j = int(np.argmin(margin))
        raise CFLError(f"negative stencil weight {margin[j]:.3g} at node {j}", 0.9 / rate)
    if margin.min() < 0.0:
        w[:, 1] = np.maximum(w[:, 1], 0.0)
    return Stencil(space.x_min, dx, idx, w, jlo, jfrac, lam * dt, leak, inflated, margin, s.copy())
