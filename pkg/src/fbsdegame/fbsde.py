"""Fully coupled forward-backward systems with jumps on short windows.

On a window of slices ``k0..k1`` the forward stencils are built from the
current backward iterate ``(Y^m, Z^m)`` and one backward pass produces
``(Y^{m+1}, Z^{m+1}, K^{m+1})``. Iteration stops when the sup-norm change
falls below ``picard_tol``. Longer horizons are covered by chaining windows
backward from ``T``; a window that fails to converge is halved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import BackwardSolution, as_terminal, backward_step
from .coeffs import CoefficientSet
from .grids import ControlGrid, SpaceGrid, TimeGrid
from .stochastics import LevyModel, Stencil, markov_stencil

INVARIANTS = ("semigroup", "picard", "apriori")

__all__ = [
    "ControlGrid", "PicardError", "SemigroupQuery", "SolverOptions", "WindowResult",
    "backward_semigroup", "chain_solve", "cost_functional", "solve_fbsde_small",
]


class PicardError(ArithmeticError):
    def __init__(self, message: str, trace: list[float]):
        self.trace = list(trace)
        super().__init__(message)


@dataclass(frozen=True)
class SolverOptions:
    delta0_steps: int = 10
    picard_tol: float = 1e-10
    picard_max: int = 100
    cfl_safety: float = 0.9


@dataclass(frozen=True)
class SemigroupQuery:
    """Backward semigroup on slices ``t .. t + delta_steps`` with terminal field.

    Policies are scalars, per-node arrays, arrays ``[step, node]`` indexed by
    the global slice, or callables ``k -> per-node array``.
    """

    t: int
    delta_steps: int
    u_policy: object = 0.0
    v_policy: object = 0.0
    terminal_field: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class WindowResult:
    solution: BackwardSolution
    iterations: int
    trace: tuple[float, ...]
    stencils: tuple[Stencil, ...] = field(repr=False)


def policy_slice(policy, k: int, n: int) -> np.ndarray:
    if policy is None:
        return np.zeros(n)
    if callable(policy):
        return np.broadcast_to(np.asarray(policy(k), dtype=float), (n,))
    arr = np.asarray(policy, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.ndim == 1:
        return arr
    return arr[k]


def forward_coefficients(cs: CoefficientSet, levy: LevyModel, t: float, x, y, z, u, v):
    """Drift, volatility and per-atom jump shifts on the nodes."""
    env = {"t": t, "x": x, "y": y, "z": z, "u": u, "v": v}
    drift = cs.b.vector(**env)
    vol = cs.sigma.vector(**env)
    if levy.n_atoms:
        shifts = np.stack([cs.h.vector(**env, e=e) for e in levy.atoms], axis=1)
    else:
        shifts = np.zeros((np.size(x), 0))
    return drift, vol, shifts


def _driver(cs: CoefficientSet, u, v):
    f = cs.f
    return lambda t, x, y, z, kb: f.vector(t=t, x=x, y=y, z=z, k=kb, u=u, v=v)


def solve_fbsde_small(query: SemigroupQuery, cs: CoefficientSet, levy: LevyModel,
                      time: TimeGrid, space: SpaceGrid, opts: SolverOptions = SolverOptions(),
                      *, enforce_cap: bool = True) -> WindowResult:
    """Picard iteration on one window; returns the converged window solution."""
    k0, m = int(query.t), int(query.delta_steps)
    if m < 0 or k0 < 0 or k0 + m > time.n_steps:
        raise ValueError(f"window [{k0}, {k0 + m}] outside the time grid 0..{time.n_steps}")
    if enforce_cap and m > opts.delta0_steps:
        raise ValueError(f"window of {m} steps exceeds delta0 = {opts.delta0_steps} steps")
    x = space.x
    n, a = space.n_nodes, levy.n_atoms
    term = as_terminal(query.terminal_field, x) if query.terminal_field is not None else as_terminal(cs.phi, x)
    times = time.times[k0:k0 + m + 1]
    Y = np.repeat(term[None, :], m + 1, axis=0)
    Z = np.zeros((m + 1, n))
    K = np.zeros((m + 1, n, a))
    if m == 0:
        return WindowResult(BackwardSolution(Y, Z, K, times, space), 0, (), ())
    lw = levy.l * levy.lam
    dt = time.dt
    y_dep = cs.f.depends_on("y")
    coupled = not cs.decoupled
    controls = [(policy_slice(query.u_policy, k0 + i, n), policy_slice(query.v_policy, k0 + i, n)) for i in range(m)]
    trace: list[float] = []
    stencils: list[Stencil] = []
    for it in range(1, opts.picard_max + 1):
        stencils = []
        Yn = np.empty_like(Y)
        Zn = np.zeros_like(Z)
        Kn = np.zeros_like(K)
        Yn[m] = term
        for i in range(m):
            u, v = controls[i]
            t = times[i]
            drift, vol, shifts = forward_coefficients(cs, levy, t, x, Y[i], Z[i], u, v)
            stencils.append(markov_stencil(dt, space, levy, drift, vol, shifts))
        for i in range(m - 1, -1, -1):
            u, v = controls[i]
            Yn[i], Zn[i], Kn[i] = backward_step(stencils[i], Yn[i + 1], times[i], x, dt,
                                                _driver(cs, u, v), y_dep, lw, k0 + i)
        change = float(max(np.max(np.abs(Yn - Y)), np.max(np.abs(Zn - Z))))
        trace.append(change)
        Y, Z, K = Yn, Zn, Kn
        if not coupled or change <= opts.picard_tol:
            break
        if not np.isfinite(change):
            raise PicardError(f"Picard iteration diverged on window [{k0}, {k0 + m}]", trace)
    else:
        raise PicardError(
            f"Picard iteration on window [{k0}, {k0 + m}] stalled at change {trace[-1]:.3e} after "
            f"{opts.picard_max} iterations; use a smaller window (delta0_steps)", trace)
    for arr in (Y, Z, K):
        arr.setflags(write=False)
    return WindowResult(BackwardSolution(Y, Z, K, times, space), it, tuple(trace), tuple(stencils))


def backward_semigroup(query: SemigroupQuery, cs: CoefficientSet, levy: LevyModel,
                       time: TimeGrid, space: SpaceGrid, opts: SolverOptions = SolverOptions()) -> np.ndarray:
    """Y at the first slice of the window."""
    if query.delta_steps == 0:
        return np.array(as_terminal(query.terminal_field, space.x), copy=True)
    return np.array(solve_fbsde_small(query, cs, levy, time, space, opts).solution.Y[0], copy=True)


@dataclass(frozen=True)
class ChainResult:
    solution: BackwardSolution
    windows: tuple[tuple[int, int], ...]
    iterations: tuple[int, ...]


def chain_solve(cs: CoefficientSet, levy: LevyModel, time: TimeGrid, space: SpaceGrid,
                u_policy=0.0, v_policy=0.0, opts: SolverOptions = SolverOptions(),
                *, start: int = 0, terminal=None) -> ChainResult:
    """Solve on slices ``start..N`` by windows of at most ``delta0_steps``."""
    N, n, a = time.n_steps, space.n_nodes, levy.n_atoms
    Y = np.empty((N + 1, n))
    Z = np.zeros((N + 1, n))
    K = np.zeros((N + 1, n, a))
    Y[N] = as_terminal(cs.phi if terminal is None else terminal, space.x)
    windows, iters = [], []
    k1 = N
    size = max(1, int(opts.delta0_steps))
    while k1 > start:
        m = min(size, k1 - start)
        try:
            res = solve_fbsde_small(SemigroupQuery(k1 - m, m, u_policy, v_policy, Y[k1]),
                                    cs, levy, time, space, opts, enforce_cap=False)
        except PicardError:
            if m == 1:
                raise
            size = max(1, m // 2)
            continue
        sol = res.solution
        Y[k1 - m:k1] = sol.Y[:-1]
        Z[k1 - m:k1] = sol.Z[:-1]
        K[k1 - m:k1] = sol.K[:-1]
        windows.append((k1 - m, k1))
        iters.append(res.iterations)
        k1 -= m
    Y, Z, K = Y[start:], Z[start:], K[start:]
    for arr in (Y, Z, K):
        arr.setflags(write=False)
    return ChainResult(BackwardSolution(Y, Z, K, time.times[start:], space), tuple(windows), tuple(iters))


def cost_functional(t: int, x_node: int, u_policy, v_policy, cs: CoefficientSet, levy: LevyModel,
                    time: TimeGrid, space: SpaceGrid, opts: SolverOptions = SolverOptions()) -> float:
    """J at slice ``t`` and node ``x_node`` for fixed feedback policies."""
    res = chain_solve(cs, levy, time, space, u_policy, v_policy, opts, start=t)
    return float(res.solution.Y[0, x_node])
