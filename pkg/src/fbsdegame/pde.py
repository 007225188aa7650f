"""Explicit monotone scheme for the nonlocal Isaacs equations in one space dimension.

For each control pair the Hamiltonian at a node is assembled as::

    1/2 sigma^2 D2W + b_eff * DW_upwind + sum_i lambda_i (W(x + h_i) - W(x))
        + f(t, x, W, z, sum_i lambda_i l_i (W(x + h_i) - W(x)))

with ``b_eff = b - sum_i lambda_i h_i`` (the compensator folded into the
drift) and ``z = DW * sigma`` from the central gradient. In the general
solver ``z`` is the root of the representation equation ``z = DW sigma(.., z, ..)``.
At the edges the second difference is zero, the upwind difference pointing
out of the grid is zero and jump targets are clamped to the edge node, so
every node keeps nonnegative weights. Time stepping is
``W_k = W_{k+1} + dt * H(W_{k+1})`` with sup-inf (lower) or inf-sup (upper)
over the control grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .algebraic import RepresentationError, solve_batch
from .coeffs import check_h31
from .game import GameProblem, ValueField, _select
from .stochastics import CFLError, LevyModel

INVARIANTS = ("monotone_scheme", "pde_comparison", "crossval", "pde_ordering")

CLAMP_LIMIT = 0.2

__all__ = [
    "PDEError", "evaluate_nonlocal", "hamiltonian_table", "solve_hjbi_general",
    "solve_hjbi_special", "viscosity_residual",
]


class PDEError(ArithmeticError):
    pass


def _jump_diffs(W: np.ndarray, x: np.ndarray, x_min: float, dx: float, shifts: np.ndarray) -> np.ndarray:
    """``W(x + h_i) - W(x)`` per node and atom, interpolated and boundary-clamped."""
    if shifts.shape[1] == 0:
        return np.zeros((x.size, 0))
    lo, frac, _ = _kernels.locate((x[:, None] + shifts - x_min) / dx, x.size)
    return _kernels.gather(W, lo, frac) - W[:, None]


def evaluate_nonlocal(field_slice, node: int, cs, levy: LevyModel, u: float, v: float, p: float,
                      *, t: float = 0.0, space=None, z: float = 0.0) -> tuple[float, float]:
    """``(B, C)`` nonlocal terms at one node for the control pair ``(u, v)``.

    ``B = sum_i lambda_i [W(x+h_i) - W(x) - p h_i]`` and
    ``C = sum_i lambda_i l_i [W(x+h_i) - W(x)]``.
    """
    W = np.asarray(field_slice, dtype=float)
    if levy.n_atoms == 0:
        return 0.0, 0.0
    if space is None:
        raise ValueError("space grid required for nonlocal terms")
    x = space.x
    xj = x[node]
    env = {"t": t, "x": xj, "y": W[node], "z": z, "u": u, "v": v}
    h = np.array([cs.h(**env, e=e) for e in levy.atoms])
    lo, frac, _ = _kernels.locate((xj + h[None, :] - space.x_min) / space.dx, x.size)
    d = _kernels.gather(W, lo, frac)[0] - W[node]
    B = float(np.sum(levy.lam * (d - p * h)))
    C = float(np.sum(levy.lam * levy.l * d))
    return B, C


@dataclass(frozen=True)
class _Slice:
    H: np.ndarray        # [u, v, node]
    coef: float          # smallest diagonal coefficient 1 - dt * rate
    clamps: int
    Z: np.ndarray
    K: np.ndarray


def hamiltonian_table(problem: GameProblem, W: np.ndarray, t: float, general: bool = False) -> _Slice:
    """Hamiltonian for every control pair at every node of one slice."""
    cs, levy, space = problem.cs, problem.levy, problem.space
    x, dx, n = space.x, space.dx, space.n_nodes
    dt = problem.time.dt
    U, V = problem.controls.U_values, problem.controls.V_values
    lam, lv = levy.lam, levy.l
    pc = np.gradient(W, dx)
    z_dep = general and cs.sigma.depends_on("z")
    H = np.empty((len(U), len(V), n))
    Zt = np.empty((len(U), len(V), n))
    Kt = np.empty((len(U), len(V), n, levy.n_atoms))
    coef = np.inf
    clamps = 0
    for i, u in enumerate(U):
        for j, v in enumerate(V):
            if general:
                p = np.maximum(pc, 0.0) if z_dep else pc
                if z_dep:
                    clamps += int(np.count_nonzero(pc < 0.0))
                try:
                    z, _ = solve_batch(cs.sigma, t, x, W, 0.0, p, u, v, cs.lip("sigma", "z"))
                except RepresentationError as exc:
                    raise PDEError(f"representation solve failed at t={t:g}: {exc}") from None
            else:
                z = pc * cs.sigma.vector(t=t, x=x, y=W, z=np.zeros(n), u=u, v=v)
            env = {"t": t, "x": x, "y": W, "z": z, "u": u, "v": v}
            sig = cs.sigma.vector(**env)
            b = cs.b.vector(**env)
            if levy.n_atoms:
                shifts = np.stack([cs.h.vector(**env, e=e) for e in levy.atoms], axis=1)
            else:
                shifts = np.zeros((n, 0))
            beff = b - shifts @ lam
            half = 0.5 * sig * sig
            op, _ = _kernels.hjbi_operator(W, dx, half, beff)
            d = _jump_diffs(W, x, space.x_min, dx, shifts)
            jump = d @ lam
            cval = d @ (lam * lv)
            fval = cs.f.vector(t=t, x=x, y=W, z=z, k=cval, u=u, v=v)
            H[i, j] = op + jump + fval
            Zt[i, j] = z
            Kt[i, j] = d
            rate = sig * sig / (dx * dx) + np.abs(beff) / dx + levy.total_intensity
            coef = min(coef, float(np.min(1.0 - dt * rate)))
    return _Slice(H, coef, clamps, Zt, Kt)


def _cfl_pre(problem: GameProblem):
    cs, space, levy = problem.cs, problem.space, problem.levy
    dt, dx = problem.time.dt, space.dx
    x = space.x
    worst = 0.0
    for u, v in problem.controls.pairs:
        for t in (problem.time.t0, problem.time.T):
            s = cs.sigma.vector(t=t, x=x, y=np.zeros_like(x), z=np.zeros_like(x), u=u, v=v)
            worst = max(worst, float(np.max(s * s)))
    rate = worst / dx ** 2 + levy.total_intensity
    limit = problem.opts.cfl_safety
    if dt * rate > limit:
        raise CFLError(f"CFL violated: dt*(max sigma^2/dx^2 + sum lambda) = {dt * rate:.4g} > {limit:g}",
                       limit / rate)


def _march(problem: GameProblem, kind: str, general: bool, terminal=None) -> ValueField:
    if kind not in ("lower", "upper"):
        raise ValueError(f"kind must be 'lower' or 'upper', got {kind!r}")
    N, n, a = problem.time.n_steps, problem.space.n_nodes, problem.levy.n_atoms
    dt = problem.time.dt
    W = np.empty((N + 1, n))
    Z = np.zeros((N + 1, n))
    K = np.zeros((N + 1, n, a))
    iu = np.zeros((N, n), dtype=np.int64)
    iv = np.zeros((N, n), dtype=np.int64)
    W[N] = problem.cs.phi.vector(x=problem.space.x) if terminal is None else np.asarray(terminal, dtype=float)
    nodes = np.arange(n)
    clamps = 0
    min_coef = np.inf
    pairs = len(problem.controls.pairs)
    for k in range(N - 1, -1, -1):
        sl = hamiltonian_table(problem, W[k + 1], problem.time.time(k + 1), general)
        if sl.coef < -1e-12:
            raise CFLError(f"scheme not monotone at slice {k}: diagonal coefficient {sl.coef:.3g}",
                           dt * (1.0 - 0.1) / (1.0 - sl.coef))
        min_coef = min(min_coef, sl.coef)
        clamps += sl.clamps
        iu[k], iv[k], best = _select(sl.H, kind)
        W[k] = W[k + 1] + dt * best
        Z[k] = sl.Z[iu[k], iv[k], nodes]
        K[k] = sl.K[iu[k], iv[k], nodes]
        if not np.all(np.isfinite(W[k])):
            raise PDEError(f"non-finite value at slice {k}")
        if general and clamps > CLAMP_LIMIT * n * pairs * (N - k):
            raise PDEError(
                f"gradient clamp fraction {clamps / (n * pairs * (N - k)):.1%} exceeds {CLAMP_LIMIT:.0%} "
                f"by slice {k}; the value is not nondecreasing in x as the representation equation needs")
    for arr in (W, Z, K, iu, iv):
        arr.setflags(write=False)
    meta = {"min_coefficient": min_coef, "clamp_events": clamps,
            "clamp_fraction": clamps / (n * pairs * N) if general else 0.0}
    return ValueField(W, kind, iu, iv, problem.time.times, problem.space, Z, K, meta)


def solve_hjbi_special(problem: GameProblem, kind: str = "lower", terminal=None) -> ValueField:
    """Scheme for sigma and h free of (y, z); ``terminal`` overrides ``phi`` on the grid."""
    if not problem.cs.special:
        raise PDEError("sigma and h must not depend on y or z for the special-case solver")
    _cfl_pre(problem)
    return _march(problem, kind, False, terminal)


def solve_hjbi_general(problem: GameProblem, kind: str = "lower", terminal=None) -> ValueField:
    """Scheme with the representation equation solved per node and control pair."""
    small = problem.smallness
    if small is None:
        small = check_h31(problem.cs, problem.levy, problem.settings.get("probes", 1000), 0,
                          threshold=problem.settings.get("smallness_threshold", 0.25),
                          controls=problem.controls)
    if not small.holds:
        raise PDEError(f"smallness check failed (L_sigma={small.L_sigma:.3g}, C_h={small.C_tilde_h:.3g}, "
                       f"threshold {small.threshold:g})")
    _cfl_pre(problem)
    return _march(problem, kind, True, terminal)


def viscosity_residual(field: ValueField, problem: GameProblem, kind: str | None = None,
                       general: bool | None = None) -> np.ndarray:
    """Scheme residual ``(W_{k+1} - W_k)/dt + H(W_k)`` per slice and node.

    The Hamiltonian is evaluated on the slice itself, so for the explicit
    scheme the residual measures ``H(W_k) - H(W_{k+1})``. Edge nodes (10% at
    each end) and the terminal slice are set to 0.
    """
    kind = kind or field.kind
    if general is None:
        general = not problem.cs.special
    W = field.values
    N = W.shape[0] - 1
    dt = problem.time.dt
    mask = problem.space.interior()
    out = np.zeros_like(W)
    for k in range(N):
        sl = hamiltonian_table(problem, W[k], problem.time.time(k), general)
        _, _, best = _select(sl.H, kind)
        r = (W[k + 1] - W[k]) / dt + best
        out[k] = np.where(mask, r, 0.0)
    return out
