"""Backward recursion for decoupled BSDEs with jumps on the Markov-chain grid.

One step from slice ``k+1`` to ``k``::

    Yhat = E_k[Y_{k+1}]
    Z_k  = vol * slope(Y_{k+1})            # regression on the diffusion arms
    K_k  = Y_{k+1}(x + e_i) - Yhat         # per atom
    Y_k  = Yhat + dt * g(t_k, x, Y_k, Z_k, sum_i K_k,i l_i lambda_i)

The last line is implicit in ``Y_k`` and solved per node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .expr import Expression, parse_expression
from .grids import SpaceGrid, TimeGrid
from .stochastics import LevyModel, Stencil

INVARIANTS = ("terminal", "bsde_comparison", "convergence", "zero_noise")

__all__ = [
    "BackwardSolution", "FixedPointError", "SpaceGrid", "as_driver", "as_terminal",
    "backward_step", "compare_bsde", "solve_bsde", "stability_gap",
]

FP_MAX = 50
FP_TOL = 1e-12


class FixedPointError(ArithmeticError):
    def __init__(self, slice_index: int, node: int, residual: float):
        self.slice_index = slice_index
        self.node = node
        self.residual = residual
        super().__init__(
            f"implicit step did not converge at slice {slice_index}, node {node} (residual {residual:.3e})")


@dataclass(frozen=True)
class BackwardSolution:
    """Solution triple on ``times`` x ``space``; ``K`` has one column per atom."""

    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    times: np.ndarray
    space: SpaceGrid

    @property
    def n_slices(self) -> int:
        return self.Y.shape[0]


Driver = Callable[[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def as_driver(g) -> tuple[Driver, bool]:
    """Normalise ``g`` to a vectorised callable; second item: depends on y."""
    if isinstance(g, (int, float)):
        c = float(g)
        return (lambda t, x, y, z, kb: np.full(np.shape(x), c)), False
    if isinstance(g, str):
        g = parse_expression(g, allowed=set("txyzk"))
    if isinstance(g, Expression):
        expr = g
        return (lambda t, x, y, z, kb: expr.vector(t=t, x=x, y=y, z=z, k=kb)), expr.depends_on("y")
    return g, True


def as_terminal(xi, x: np.ndarray) -> np.ndarray:
    if isinstance(xi, str):
        xi = parse_expression(xi, allowed={"x"})
    if isinstance(xi, Expression):
        return xi.vector(x=x)
    if callable(xi):
        return np.asarray(xi(x), dtype=float)
    arr = np.asarray(xi, dtype=float)
    return np.broadcast_to(arr, x.shape).astype(float)


def _implicit(yhat, dt, gfun, y_dep, slice_index):
    """Solve ``y = yhat + dt * gfun(y)`` per node."""
    y = yhat + dt * gfun(yhat)
    if not y_dep:
        return y
    for _ in range(FP_MAX):
        y_new = yhat + dt * gfun(y)
        if np.all(np.abs(y_new - y) <= FP_TOL * np.maximum(1.0, np.abs(y_new))):
            return y_new
        y = y_new
    # fixed point stalled (stiff driver): Newton with a difference quotient
    y = yhat.copy()
    for _ in range(FP_MAX):
        gy = gfun(y)
        res = y - yhat - dt * gy
        eps = 1e-7 * np.maximum(1.0, np.abs(y))
        slope = 1.0 - dt * (gfun(y + eps) - gy) / eps
        slope = np.where(np.abs(slope) < 1e-12, 1.0, slope)
        y = y - res / slope
        res = np.abs(y - yhat - dt * gfun(y))
        if np.all(res <= FP_TOL * np.maximum(1.0, np.abs(y))):
            return y
    j = int(np.argmax(res))
    raise FixedPointError(slice_index, j, float(res[j]))


def backward_step(stencil: Stencil, y_next: np.ndarray, t: float, x: np.ndarray, dt: float,
                  gfun: Driver, y_dep: bool, lw: np.ndarray, slice_index: int = -1):
    """One implicit step; returns ``(Y_k, Z_k, K_k)``."""
    yhat = stencil.expect(y_next)
    z = stencil.z_component(y_next)
    if lw.size:
        K = stencil.jump_values(y_next) - yhat[:, None]
        kbar = K @ lw
    else:
        K = np.zeros((x.size, 0))
        kbar = np.zeros(x.size)
    y = _implicit(yhat, dt, lambda yy: gfun(t, x, yy, z, kbar), y_dep, slice_index)
    if not np.all(np.isfinite(y)):
        j = int(np.argmax(~np.isfinite(y)))
        raise FixedPointError(slice_index, j, math.inf)
    return y, z, K


def solve_bsde(grid: TimeGrid, space: SpaceGrid, levy: LevyModel,
               stencils: Stencil | Sequence[Stencil] | Callable[[int], Stencil],
               driver, terminal) -> BackwardSolution:
    """Backward recursion over all slices of ``grid``.

    ``stencils`` is a single stencil used on every step, a sequence indexed
    by step, or a callable ``k -> Stencil``. ``driver`` is a number, an
    expression in ``(t, x, y, z, k)`` (``k`` is the atom-weighted jump sum)
    or a vectorised callable ``g(t, x, y, z, kbar)``.
    """
    n, N, a = space.n_nodes, grid.n_steps, levy.n_atoms
    x = space.x
    gfun, y_dep = as_driver(driver)
    if isinstance(stencils, Stencil):
        get = lambda k: stencils  # noqa: E731
    elif callable(stencils):
        get = stencils
    else:
        get = stencils.__getitem__
    lw = levy.l * levy.lam
    Y = np.empty((N + 1, n))
    Z = np.zeros((N + 1, n))
    K = np.zeros((N + 1, n, a))
    Y[N] = as_terminal(terminal, x)
    dt = grid.dt
    for k in range(N - 1, -1, -1):
        Y[k], Z[k], K[k] = backward_step(get(k), Y[k + 1], grid.time(k), x, dt, gfun, y_dep, lw, k)
    for arr in (Y, Z, K):
        arr.setflags(write=False)
    return BackwardSolution(Y, Z, K, grid.times, space)


# --- comparison and stability ----------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    holds: bool
    worst_margin: float


def _same_grid(a: BackwardSolution, b: BackwardSolution):
    if a.Y.shape != b.Y.shape or a.space != b.space or not np.array_equal(a.times, b.times):
        raise ValueError("solutions live on different grids")


def compare_bsde(sol_a: BackwardSolution, sol_b: BackwardSolution, tol: float = 1e-10) -> Verdict:
    """``Y^A >= Y^B - tol`` on every slice and node."""
    _same_grid(sol_a, sol_b)
    margin = float(np.min(sol_a.Y - sol_b.Y))
    return Verdict(margin >= -tol, margin)


@dataclass(frozen=True)
class StabilityReport:
    lhs: np.ndarray  # [slice, node]
    rhs: np.ndarray
    beta: float
    satisfied: bool

    @property
    def worst_ratio(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.rhs > 0, self.lhs / self.rhs, np.where(self.lhs > 0, np.inf, 0.0))
        return float(np.max(r))


def stability_gap(sol_a: BackwardSolution, sol_b: BackwardSolution, stencils, levy: LevyModel,
                  xi: tuple, phi: tuple, C: float) -> StabilityReport:
    """Both sides of the a-priori difference estimate, with ``beta = 2 + 2C + 4C^2``.

    Conditional expectations are taken under the same chain that produced the
    solutions; the time integrals are left Riemann sums on the grid.
    ``xi = (xi_1, xi_2)`` are terminal data and ``phi = (phi_1, phi_2)`` the
    additive driver perturbations (numbers or callables of ``t``).
    """
    _same_grid(sol_a, sol_b)
    if isinstance(stencils, Stencil):
        get = lambda k: stencils  # noqa: E731
    elif callable(stencils):
        get = stencils
    else:
        get = stencils.__getitem__
    beta = 2.0 + 2.0 * C + 4.0 * C * C
    times = sol_a.times
    N = times.size - 1
    dt = times[1] - times[0]
    x = sol_a.space.x
    dY = sol_a.Y - sol_b.Y
    dZ = sol_a.Z - sol_b.Z
    dK = sol_a.K - sol_b.K
    lam = levy.lam
    growth = math.exp(beta * dt)

    def _phi(p, t):
        return float(p(t)) if callable(p) else float(p)

    d_xi = as_terminal(xi[0], x) - as_terminal(xi[1], x)
    R = d_xi ** 2                 # terminal term
    P = np.zeros_like(R)          # perturbation integral
    A = np.zeros_like(R)          # integral on the left
    lhs = np.empty_like(sol_a.Y)
    rhs = np.empty_like(sol_a.Y)
    lhs[N] = dY[N] ** 2
    rhs[N] = R
    for k in range(N - 1, -1, -1):
        st = get(k)
        q = dY[k] ** 2 + dZ[k] ** 2 + (dK[k] ** 2) @ lam
        dphi = _phi(phi[0], times[k]) - _phi(phi[1], times[k])
        A = dt * q + growth * st.expect(A)
        R = growth * st.expect(R)
        P = dt * dphi ** 2 + growth * st.expect(P)
        lhs[k] = dY[k] ** 2 + 0.5 * A
        rhs[k] = R + P
    ok = bool(np.all(lhs <= rhs * (1.0 + 1e-6) + 1e-300))
    return StabilityReport(lhs, rhs, beta, ok)
