"""Property suite over a game problem with one verdict per module invariant.

Every property id in :data:`PROPERTIES` maps to exactly one entry of some
module's ``INVARIANTS`` tuple; :func:`coverage` reports ids that are missing
on either side. Tolerances come from the ``[verify]`` config section when
present (``<id> = value``), otherwise from the defaults listed here, and the
source is recorded in each entry.
"""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import __version__, algebraic, bsde, coeffs, fbsde, game, pde, stochastics
from .algebraic import AlgebraicQuery, bracket_root, representation_bounds
from .bsde import compare_bsde, solve_bsde
from .coeffs import check_h22, check_h23, growth_bound, lipschitz_bound, parse_coefficients
from .expr import parse_expression
from .fbsde import SemigroupQuery, backward_semigroup, chain_solve, forward_coefficients, policy_slice, \
    solve_fbsde_small
from .game import GameProblem, ValueField, _dp, dpp_consistency, isaacs_gap
from .grids import SpaceGrid, TimeGrid
from .stochastics import discretize_levy, make_rng, markov_stencil, sample_paths

__all__ = [
    "EVReport", "PROPERTIES", "VerificationReport", "coverage", "expected_value_reduction",
    "holder_exponent", "run_suite",
]

MODULES = (coeffs, stochastics, bsde, algebraic, fbsde, game, pde)


@dataclass(frozen=True)
class Outcome:
    measured: float | None
    tol: float
    passed: bool | None          # None: not applicable to this problem
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Property:
    id: str
    module: str
    anchor: str
    default_tol: float
    kind: str                    # "scheme", "rounding", "statistical", "exact"
    run: Callable


@dataclass(frozen=True)
class VerificationReport:
    entries: tuple
    config_digest: str
    seed: int
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(e["status"] in ("pass", "skipped") for e in self.entries)

    def to_dict(self, *, timings: bool = True) -> dict:
        entries = [dict(e) if timings else {k: v for k, v in e.items() if k != "runtime_ms"}
                   for e in self.entries]
        return {"version": self.version, "config_digest": self.config_digest, "seed": self.seed,
                "entries": entries}

    def to_json(self, *, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings=timings), indent=2, sort_keys=True, allow_nan=False,
                          default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _clean(v):
    """Floats for JSON: non-finite values become strings."""
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return str(v)


# --- shared computations ---------------------------------------------------------


class _Context:
    """Caches solves shared between properties of one suite run."""

    def __init__(self, problem: GameProblem, seed: int):
        self.problem = problem
        self.seed = seed
        self._cache: dict = {}

    def get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def lower(self) -> ValueField:
        return self.get("lower", lambda: game.lower_value(self.problem))

    def upper(self) -> ValueField:
        return self.get("upper", lambda: game.upper_value(self.problem))

    def pde(self, kind: str, problem: GameProblem | None = None) -> ValueField:
        pb = problem or self.problem
        solver = pde.solve_hjbi_special if pb.cs.special else pde.solve_hjbi_general
        if problem is None:
            return self.get(("pde", kind), lambda: solver(pb, kind))
        return solver(pb, kind)

    def first_stencil(self):
        """Forward stencil of the first slice at the first control pair, ``Y = phi``."""
        def build():
            pb = self.problem
            x = pb.space.x
            u, v = pb.controls.pairs[0]
            y = pb.cs.phi.vector(x=x)
            b, s, sh = forward_coefficients(pb.cs, pb.levy, pb.time.t0, x, y, np.zeros_like(x), u, v)
            return markov_stencil(pb.time.dt, pb.space, pb.levy, b, s, sh), b, s, sh
        return self.get("stencil", build)

    def lip_bound(self) -> float:
        pb = self.problem
        return lipschitz_bound(pb.cs, pb.levy, pb.time.T - pb.time.t0)


def _short(problem: GameProblem, steps: int) -> GameProblem:
    m = min(steps, problem.time.n_steps)
    T = problem.time.T
    return replace(problem, time=TimeGrid(T - m * problem.time.dt, T, m))


def _ordered_pairs(x: np.ndarray, count: int, seed: int):
    """Random polynomial pairs with ``xi_1 >= xi_2`` pointwise."""
    rng = make_rng(seed)
    scale = max(1.0, float(np.max(np.abs(x))))
    for _ in range(count):
        c = rng.normal(size=4)
        base = c[0] + c[1] * x / scale + 0.5 * c[2] * (x / scale) ** 2 + 0.2 * c[3] * (x / scale) ** 3
        gap = abs(rng.normal()) + abs(rng.normal()) * (x / scale) ** 2
        yield base + gap, base


def _perturbed_pairs(phi: np.ndarray, x: np.ndarray, count: int, seed: int):
    """Ordered pairs near the problem's own terminal data, with slopes moved by at most 0.3.

    Staying close to ``phi`` keeps the pairs inside the class the monotonicity
    certificate and the CFL bound were checked for.
    """
    rng = make_rng(seed)
    for _ in range(count):
        a, w, th, c0 = 0.3 * rng.random(), 0.2 + 0.8 * rng.random(), 6.3 * rng.random(), rng.normal()
        low = phi + c0 + (a / w) * np.sin(w * x + th)
        g0, g1, w2 = rng.random(), 0.3 * rng.random(), 0.2 + 0.8 * rng.random()
        gap = g0 + (g1 / w2) * (1.0 + np.cos(w2 * x + th))
        yield low + gap, low


# --- coeffs ----------------------------------------------------------------------


def _p_roundtrip(ctx: _Context, tol: float) -> Outcome:
    rng = make_rng(ctx.seed)
    worst = 0.0
    for name, expr in ctx.problem.cs.expressions().items():
        again = parse_expression(expr.to_source())
        env = {v: 5.0 * (2.0 * rng.random(1000) - 1.0) for v in sorted(expr.variables)}
        with np.errstate(all="ignore"):
            a = expr.vector(**env) if env else np.full(1000, expr())
            b = again.vector(**env) if env else np.full(1000, again())
        same = (a == b) | (np.isnan(a) & np.isnan(b))
        diff = np.where(same, 0.0, np.abs(a - b))
        worst = max(worst, float(np.max(np.nan_to_num(diff, nan=np.inf))))
    return Outcome(worst, tol, worst <= tol)


def _p_h23_running_max(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    budgets = (250, 500, 1000, 2000)
    worst = [check_h23(pb.cs, pb.levy, pb.cert, n, ctx.seed, t_range=(pb.time.t0, pb.time.T),
                       controls=pb.controls).worst_violation for n in budgets]
    drop = max(0.0, max(a - b for a, b in zip(worst, worst[1:])))
    return Outcome(drop, tol, drop <= tol, {"budgets": budgets, "worst_violation": worst})


_LINEAR = {"b": ("1.5*x - 0.5*y + 0.25*z", {"x": 1.5, "y": 0.5, "z": 0.25}),
           "sigma": ("0.3*x + 0.2*y - 0.1*z", {"x": 0.3, "y": 0.2, "z": 0.1}),
           "f": ("-2*x + 0.7*y - 0.4*z + 0.6*k", {"x": 2.0, "y": 0.7, "z": 0.4, "k": 0.6}),
           "phi": ("3*x", {"x": 3.0})}


def _p_lipschitz_estimate(ctx: _Context, tol: float) -> Outcome:
    text = "[model]\n" + "".join(f'{k} = "{v[0]}"\n' for k, v in _LINEAR.items())
    cs = parse_coefficients(text)
    levy = discretize_levy([], "0")
    rep = check_h22(cs, levy, 10_000, ctx.seed)
    worst_short, over = 0.0, 0.0
    for name, (_, true) in _LINEAR.items():
        for var, L in true.items():
            est = rep.lipschitz[f"{name}.{var}"]
            worst_short = max(worst_short, (L - est) / L)
            over = max(over, (est - L) / L)
    ok = over <= 1e-9 and worst_short <= tol
    return Outcome(worst_short, tol, ok, {"max_overshoot": over})


# --- stochastics -----------------------------------------------------------------


def _p_stencil_moments(ctx: _Context, tol: float) -> Outcome:
    st, b, s, sh = ctx.first_stencil()
    pb = ctx.problem
    x, dt, dx, lam = pb.space.x, pb.time.dt, pb.space.dx, pb.levy.lam
    P = st.dense()
    mass = np.abs(P.sum(axis=1) - 1.0)
    away = (st.leak == 0.0) & (np.arange(x.size) > 1) & (np.arange(x.size) < x.size - 2)
    ok = away & ~st.inflated   # inflated nodes carry extra upwind variance by design
    m1 = P @ x - x
    m2 = P @ (x * x) - 2 * x * (P @ x) + x * x
    e1 = np.abs(m1 - b * dt)[away]
    e2 = np.abs(m2 - (s * s * dt + (b * dt) ** 2 + (sh * sh) @ lam * dt))[ok]
    split = 0.0
    if pb.levy.n_atoms:
        target = x[:, None] + sh
        lo, fr = st.jlo, st.jfrac
        hit = x[np.minimum(lo + 1, x.size - 1)]
        landed = (1 - fr) * x[lo] + fr * hit
        inside = (target >= x[0]) & (target <= x[-1])
        split = float(np.max(np.abs(landed - target)[inside], initial=0.0))
    worst = float(max(mass.max(), np.max(e1, initial=0.0), np.max(e2, initial=0.0), split))
    return Outcome(worst, tol, worst <= tol, {"mass": float(mass.max()), "mean_nodes": int(away.sum()),
                                              "variance_nodes": int(ok.sum()),
                                              "jump_split": split, "dx": dx})


def _p_path_laws(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    paths = sample_paths(pb.time, pb.levy, 4000, ctx.seed)
    dB = paths.brownian_increments.ravel()
    M, dt = dB.size, paths.dt
    z = [abs(dB.mean()) / math.sqrt(dt / M),
         abs(dB.var(ddof=1) - dt) / (dt * math.sqrt(2.0 / (M - 1)))]
    for i, lam in enumerate(pb.levy.lam):
        c = paths.jump_counts[:, :, i].ravel()
        z.append(abs(c.mean() - lam * dt) / math.sqrt(lam * dt / c.size))
    worst = float(max(z))
    return Outcome(worst, tol, worst <= tol, {"z_scores": z})


# --- bsde ------------------------------------------------------------------------


def _p_terminal(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    W = ctx.lower().values
    d = float(np.max(np.abs(W[-1] - pb.cs.phi.vector(x=pb.space.x))))
    return Outcome(d, tol, d <= tol)


def _p_bsde_comparison(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    st = ctx.first_stencil()[0]
    x = pb.space.x
    rng = make_rng(ctx.seed + 1)
    worst, held = math.inf, 0
    pairs = list(_ordered_pairs(x, 100, ctx.seed))
    for xi1, xi2 in pairs:
        a, c, g, d = rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(-1, 1), rng.uniform(0, 1)
        g2 = lambda t, xx, y, zz, kb, a=a, c=c, g=g: a * y + c * zz + g  # noqa: E731
        g1 = lambda t, xx, y, zz, kb, a=a, c=c, g=g, d=d: a * y + c * zz + g + d  # noqa: E731
        s1 = solve_bsde(pb.time, pb.space, pb.levy, st, g1, xi1)
        s2 = solve_bsde(pb.time, pb.space, pb.levy, st, g2, xi2)
        v = compare_bsde(s1, s2, tol)
        held += v.holds
        worst = min(worst, v.worst_margin)
    return Outcome(worst, tol, held == len(pairs), {"pairs": len(pairs), "held": held})


def _heat_bsde(n_steps: int):
    time = TimeGrid(0.0, 1.0, n_steps)
    dx = 0.5 * math.sqrt(time.dt)
    half = math.ceil(4.0 / dx)
    space = SpaceGrid(-half * dx, half * dx, 2 * half + 1)
    levy = discretize_levy([], "0")
    st = markov_stencil(time, space, levy, 0.0, 0.5)
    return solve_bsde(time, space, levy, st, "-y", 1.0)


def _p_convergence(ctx: _Context, tol: float) -> Outcome:
    exact = math.exp(-1.0)
    errs = [float(np.max(np.abs(_heat_bsde(n).Y[0] - exact))) for n in (50, 100, 200)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    worst = max(abs(r - 2.0) for r in ratios)
    return Outcome(worst, tol, worst <= tol, {"errors": errs, "ratios": ratios})


def _p_zero_noise(ctx: _Context, tol: float) -> Outcome:
    time = TimeGrid(0.0, 1.0, 64)
    space = SpaceGrid(-1.0, 1.0, 5)
    levy = discretize_levy([], "0")
    st = markov_stencil(time, space, levy, 0.0, 0.0)
    sol = solve_bsde(time, space, levy, st, "-y + sin(t) + x", 1.0)
    x, dt = space.x, time.dt
    y = np.ones_like(x)
    implicit_gap = explicit_gap = 0.0
    for k in range(time.n_steps - 1, -1, -1):
        t = time.time(k)
        explicit = y + dt * (-y + math.sin(t) + x)
        y = (y + dt * (math.sin(t) + x)) / (1.0 + dt)
        implicit_gap = max(implicit_gap, float(np.max(np.abs(sol.Y[k] - y))))
        explicit_gap = max(explicit_gap, float(np.max(np.abs(y - explicit))))
    return Outcome(implicit_gap, tol, implicit_gap <= tol,
                   {"explicit_euler_step_gap": explicit_gap, "dt": dt})


# --- algebraic -------------------------------------------------------------------


def _p_representation(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    rep = representation_bounds(pb.cs, 1000, ctx.seed, controls=pb.controls)
    return Outcome(rep.max_residual, tol, rep.max_residual <= tol,
                   {"growth_ratio": rep.growth_ratio, "growth_constant": rep.growth_constant,
                    "lip_xi": rep.lip_xi, "lip_xi_bound": rep.lip_xi_bound})


def _p_uniqueness(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    rng = make_rng(ctx.seed)
    r = rng.random((1000, 7))
    U, V = np.asarray(pb.controls.U_values), np.asarray(pb.controls.V_values)
    worst = 0.0
    for row in r:
        q = AlgebraicQuery(row[0], 10 * row[1] - 5, 10 * row[2] - 5, 20 * row[3] - 10, 3 * row[4],
                           U[min(int(row[5] * U.size), U.size - 1)], V[min(int(row[6] * V.size), V.size - 1)])
        z1 = bracket_root(q, pb.cs)
        z2 = bracket_root(q, pb.cs, (q.xi - 137.0, q.xi + 59.0))
        worst = max(worst, abs(z1 - z2))
    return Outcome(worst, tol, worst <= tol)


# --- fbsde -----------------------------------------------------------------------


def _first_pair(pb: GameProblem):
    return pb.controls.pairs[0]


def _p_semigroup(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    N = pb.time.n_steps
    m = max(1, min(pb.opts.delta0_steps // 2, N // 2))
    k0 = N - 2 * m
    u, v = _first_pair(pb)
    phi = pb.cs.phi.vector(x=pb.space.x)
    args = (pb.cs, pb.levy, pb.time, pb.space, pb.opts)
    mid = backward_semigroup(SemigroupQuery(k0 + m, m, u, v, phi), *args)
    two = backward_semigroup(SemigroupQuery(k0, m, u, v, mid), *args)
    direct = backward_semigroup(SemigroupQuery(k0, 2 * m, u, v, phi), *args)
    gap = float(np.max(np.abs(two - direct)))
    return Outcome(gap, tol * pb.time.dt, gap <= tol * pb.time.dt, {"delta_steps": m})


def _p_picard(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    d = min(pb.opts.delta0_steps, pb.time.n_steps)
    u, v = _first_pair(pb)
    res = solve_fbsde_small(SemigroupQuery(pb.time.n_steps - d, d, u, v, pb.cs.phi.vector(x=pb.space.x)),
                            pb.cs, pb.levy, pb.time, pb.space, pb.opts)
    tr = res.trace
    ratios = [b / a for a, b in zip(tr, tr[1:]) if a < 1e-2 and b > 1e-14]
    worst = max(ratios, default=0.0)
    return Outcome(worst, tol, worst < tol, {"iterations": res.iterations, "trace": list(tr)})


def _p_apriori(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    u, v = _first_pair(pb)
    sol = chain_solve(pb.cs, pb.levy, pb.time, pb.space, u, v, pb.opts).solution
    x = pb.space.x
    horizon = pb.time.T - pb.time.t0
    L = ctx.lip_bound()
    h22 = pb.h22 or check_h22(pb.cs, pb.levy, controls=pb.controls)
    Cg = growth_bound(pb.cs, pb.levy, horizon, h22.growth)
    quot = float(np.max(np.abs(np.diff(sol.Y, axis=1)) / pb.space.dx))
    grow = float(np.max(np.abs(sol.Y) / (1.0 + np.abs(x))))
    ratio = max(quot / L if L > 0 else (math.inf if quot > 1e-12 else 0.0), grow / Cg)
    return Outcome(ratio, tol, ratio <= tol * (1 + 1e-9), {"lipschitz_quotient": quot, "lipschitz_bound": L,
                                              "growth_ratio": grow, "growth_bound": Cg})


# --- game ------------------------------------------------------------------------


def _p_ordering(ctx: _Context, tol: float) -> Outcome:
    d = float(np.max(ctx.lower().values - ctx.upper().values))
    return Outcome(d, tol, d <= tol)


def _p_comparison(ctx: _Context, tol: float) -> Outcome:
    pb = _short(ctx.problem, 10)
    worst, held = math.inf, 0
    phi = pb.cs.phi.vector(x=pb.space.x)
    pairs = list(_perturbed_pairs(phi, pb.space.x, 50, ctx.seed))
    for p1, p2 in pairs:
        m = float(np.min(_dp(pb, "lower", terminal=p1).values - _dp(pb, "lower", terminal=p2).values))
        held += m >= -tol
        worst = min(worst, m)
    return Outcome(worst, tol, held == len(pairs), {"pairs": len(pairs), "held": held,
                                                    "slices": pb.time.n_steps})


def monotonicity_margin(W: np.ndarray, x: np.ndarray, G: float) -> float:
    """``min over slices and grid pairs of (W(x) - W(xb)) G (x - xb)``."""
    worst = math.inf
    dxm = x[:, None] - x[None, :]
    for row in W:
        worst = min(worst, float(np.min((row[:, None] - row[None, :]) * G * dxm)))
    return worst


def _p_monotonicity(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    t = tol * pb.space.dx * ctx.lip_bound()
    m = monotonicity_margin(ctx.lower().values, pb.space.x, pb.cert.G)
    return Outcome(m, t, m >= -t)


def _p_lipschitz(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    q = float(np.max(np.abs(np.diff(ctx.lower().values, axis=1))) / pb.space.dx)
    bound = tol * ctx.lip_bound()
    return Outcome(q, bound, q <= bound, {"metadata_constant": ctx.lip_bound()})


def holder_constant(field: ValueField) -> float:
    """Smallest C with |W(t,x) - W(t',x)| <= C (1 + |x|) |t - t'|^(1/2) on the grid."""
    W, t = field.values, field.times
    w = 1.0 + np.abs(field.space.x)
    best = 0.0
    for k in range(len(t) - 1):
        dW = np.abs(W[k + 1:] - W[k]) / w
        best = max(best, float(np.max(dW / np.sqrt(t[k + 1:] - t[k])[:, None])))
    return best


def holder_exponent(field: ValueField, min_lag: int = 4) -> float:
    """Log-log slope of ``max_x |W(T - tau, x) - W(T, x)| / (1 + |x|)`` against ``tau``."""
    W, t = field.values, field.times
    w = 1.0 + np.abs(field.space.x)
    tau = t[-1] - t[:-1]
    inc = np.max(np.abs(W[:-1] - W[-1]) / w, axis=1)
    use = (np.arange(tau.size)[::-1] + 1 >= min_lag) & (inc > 0)
    if use.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(tau[use]), np.log(inc[use]), 1)[0])


def _p_holder(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    c1 = holder_constant(ctx.lower())
    fine = game.lower_value(pb.with_grid(n_steps=2 * pb.time.n_steps))
    c2 = holder_constant(fine)
    floor = 1e-10 * max(1.0, float(np.max(np.abs(ctx.lower().values))))
    drift = 0.0 if max(c1, c2) <= floor else abs(c2 / c1 - 1.0)
    return Outcome(drift, tol, drift <= tol, {"C_coarse": c1, "C_fine": c2,
                                              "exponent": holder_exponent(ctx.lower())})


SWEEP = tuple(16 * 2 ** i for i in range(9))


def _p_determinism(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    again = game.lower_value(pb)
    same = bool(np.array_equal(again.values, ctx.lower().values))
    rep = expected_value_reduction(pb, n_paths=SWEEP, seeds=range(ctx.seed, ctx.seed + 10))
    if rep.constant:
        dev = 0.0
    else:
        dev = abs(rep.slope + 0.5)
    return Outcome(dev, tol, same and dev <= tol, {"bit_identical": same, "slope": rep.slope,
                                                   "std": rep.stds, "grid_value": rep.grid_value,
                                                   "mc_mean": rep.means[-1], "mc_se": rep.ses[-1]})


def _p_dpp(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    rep = dpp_consistency(pb, pb.time.n_steps // 2, direct=ctx.lower())
    t = tol * pb.time.dt
    return Outcome(rep.sup_gap, t, rep.sup_gap <= t, {"composition_gap": rep.composition_gap,
                                                      "policy_gap": rep.policy_gap})


def _p_isaacs(ctx: _Context, tol: float) -> Outcome:
    t = tol * ctx.problem.time.dt
    rep = isaacs_gap(ctx.lower(), ctx.upper(), t)
    return Outcome(rep.max_gap, t, rep.value_exists)


# --- pde -------------------------------------------------------------------------


def _p_monotone_scheme(ctx: _Context, tol: float) -> Outcome:
    m = float(ctx.pde("lower").meta["min_coefficient"])
    return Outcome(m, tol, m >= -tol)


def _p_pde_comparison(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    solver = pde.solve_hjbi_special if pb.cs.special else pde.solve_hjbi_general
    short = _short(pb, 20)
    worst, held = math.inf, 0
    phi = pb.cs.phi.vector(x=pb.space.x)
    pairs = list(_perturbed_pairs(phi, pb.space.x, 10, ctx.seed))
    for p1, p2 in pairs:
        m = float(np.min(solver(short, "lower", p1).values - solver(short, "lower", p2).values))
        held += m >= -tol
        worst = min(worst, m)
    return Outcome(worst, tol, held == len(pairs), {"pairs": len(pairs), "held": held})


def _refined(pb: GameProblem) -> GameProblem:
    fine = pb.with_grid(2 * pb.time.n_steps, 2 * (pb.space.n_nodes - 1) + 1)
    try:
        pde._cfl_pre(fine)
        return fine
    except stochastics.CFLError:
        return pb.with_grid(4 * pb.time.n_steps, 2 * (pb.space.n_nodes - 1) + 1)


def crossval_distance(pb: GameProblem, lower: ValueField | None = None, pde_field: ValueField | None = None):
    """Interior sup distance between the game and PDE lower fields, and its tolerance ``dt + dx``."""
    g = lower or game.lower_value(pb)
    p = pde_field or pde.solve_hjbi_special(pb, "lower")
    m = pb.space.interior()
    return float(np.max(np.abs(g.values - p.values)[:, m])), pb.time.dt + pb.space.dx


def _p_crossval(ctx: _Context, tol: float) -> Outcome:
    pb = ctx.problem
    if not pb.cs.special:
        return Outcome(None, tol, None, {"reason": "sigma or h depend on (y, z)"})
    d1, h1 = crossval_distance(pb, ctx.lower(), ctx.pde("lower"))
    fine = _refined(pb)
    d2, h2 = crossval_distance(fine)
    exact = max(d1, d2) <= 1e-8
    ratio = d2 / d1 if d1 > 0 else 0.0
    ok = d1 <= tol * h1 and d2 <= tol * h2 and (exact or ratio <= 0.7)
    return Outcome(d1, tol * h1, ok, {"fine_distance": d2, "fine_tol": tol * h2, "ratio": ratio,
                                      "agree_to_rounding": exact})


def _p_pde_ordering(ctx: _Context, tol: float) -> Outcome:
    d = float(np.max(ctx.pde("lower").values - ctx.pde("upper").values))
    return Outcome(d, tol, d <= tol)


# --- registry --------------------------------------------------------------------


def _P(id, module, anchor, tol, kind, run):
    return Property(id, module, anchor, tol, kind, run)


PROPERTIES: dict[str, Property] = {p.id: p for p in (
    _P("roundtrip", "coeffs", "expression print/parse round trip", 0.0, "exact", _p_roundtrip),
    _P("h23_running_max", "coeffs", "monotonicity certificate: worst violation is a running maximum",
       0.0, "exact", _p_h23_running_max),
    _P("lipschitz_estimate", "coeffs", "Lipschitz estimates on linear coefficients", 0.01, "statistical",
       _p_lipschitz_estimate),
    _P("stencil_moments", "stochastics", "Markov-chain stencil matches drift and variance", 1e-12,
       "rounding", _p_stencil_moments),
    _P("path_laws", "stochastics", "Brownian and Poisson increment laws", 4.0, "statistical", _p_path_laws),
    _P("terminal", "bsde", "terminal condition Y(T) = xi", 0.0, "exact", _p_terminal),
    _P("bsde_comparison", "bsde", "comparison theorem for BSDEs with jumps", 1e-10, "rounding",
       _p_bsde_comparison),
    _P("convergence", "bsde", "first-order convergence in dt", 0.3, "scheme", _p_convergence),
    _P("zero_noise", "bsde", "deterministic limit is the ODE recursion", 1e-10, "rounding", _p_zero_noise),
    _P("representation", "algebraic", "algebraic representation equation for z", 1e-12, "rounding",
       _p_representation),
    _P("uniqueness", "algebraic", "unique root of the representation equation", 1e-10, "rounding",
       _p_uniqueness),
    _P("semigroup", "fbsde", "backward semigroup composition", 5.0, "scheme", _p_semigroup),
    _P("picard", "fbsde", "Picard contraction on short windows", 1.0, "scheme", _p_picard),
    _P("apriori", "fbsde", "a-priori growth and Lipschitz bounds for the FBSDE", 1.0, "scheme", _p_apriori),
    _P("ordering", "game", "lower value never exceeds upper value", 1e-10, "rounding", _p_ordering),
    _P("comparison", "game", "comparison in terminal data", 1e-10, "rounding", _p_comparison),
    _P("monotonicity", "game", "monotonicity of the value under G", 2.0, "scheme", _p_monotonicity),
    _P("lipschitz", "game", "Lipschitz continuity of the value in x", 1.1, "scheme", _p_lipschitz),
    _P("holder", "game", "half-Hoelder continuity of the value in t", 0.2, "scheme", _p_holder),
    _P("determinism", "game", "value is deterministic; Monte Carlo spread ~ n^-1/2", 0.1, "statistical",
       _p_determinism),
    _P("dpp", "game", "dynamic programming principle", 5.0, "scheme", _p_dpp),
    _P("isaacs", "game", "Isaacs condition: lower and upper values coincide", 4.0, "scheme", _p_isaacs),
    _P("monotone_scheme", "pde", "monotone explicit scheme under the CFL bound", 0.0, "exact",
       _p_monotone_scheme),
    _P("pde_comparison", "pde", "comparison for the Isaacs equation", 1e-10, "rounding", _p_pde_comparison),
    _P("crossval", "pde", "lower value is the viscosity solution of the lower Isaacs equation", 5.0,
       "scheme", _p_crossval),
    _P("pde_ordering", "pde", "lower PDE field never exceeds upper PDE field", 1e-10, "rounding",
       _p_pde_ordering),
)}


def coverage() -> dict:
    """Invariants without a property id and property ids without an invariant."""
    declared = {(m.__name__.rsplit(".", 1)[-1], inv) for m in MODULES for inv in m.INVARIANTS}
    registered = {(p.module, p.id) for p in PROPERTIES.values()}
    return {"missing": sorted(declared - registered), "orphan": sorted(registered - declared)}


def run_suite(problem: GameProblem, selections=None, *, seed: int = 0) -> VerificationReport:
    """Run the selected property ids (all when ``selections`` is None or ``"all"``)."""
    if selections is None or selections == "all":
        ids = list(PROPERTIES)
    else:
        sel = [selections] if isinstance(selections, str) else list(selections)
        unknown = [s for s in sel if s not in PROPERTIES]
        if unknown:
            raise KeyError(f"unknown property ids: {', '.join(unknown)}")
        ids = [i for i in PROPERTIES if i in set(sel)]
    ctx = _Context(problem, seed)
    overrides = problem.settings.get("verify", {}) if problem.settings else {}
    entries = []
    for pid in ids:
        prop = PROPERTIES[pid]
        if pid in overrides:
            tol, source = float(overrides[pid]), "config"
        else:
            tol, source = prop.default_tol, "default"
        start = _time.perf_counter()
        try:
            out = prop.run(ctx, tol)
            status = "skipped" if out.passed is None else ("pass" if out.passed else "fail")
            entry = {"measured": _clean(out.measured), "tol": _clean(out.tol), "pass": out.passed,
                     "details": _clean(out.details)}
        except Exception as exc:  # noqa: BLE001 - a failing solver marks the entry, not the suite
            status = "errored"
            entry = {"measured": None, "tol": _clean(tol), "pass": False,
                     "details": {"error": f"{type(exc).__name__}: {exc}"}}
        elapsed = (_time.perf_counter() - start) * 1e3
        entries.append({"id": pid, "module": prop.module, "anchor": prop.anchor, "status": status,
                        "tol_source": source, "tol_kind": prop.kind, "runtime_ms": round(elapsed, 3),
                        **entry})
    return VerificationReport(tuple(entries), problem.digest, int(seed))


# --- Monte Carlo reduction --------------------------------------------------------


@dataclass(frozen=True)
class EVReport:
    grid_value: float
    n_paths: tuple
    estimates: tuple        # per n_paths: per-seed estimates
    means: tuple
    stds: tuple             # spread of the estimates across seeds
    ses: tuple              # mean within-seed standard error
    slope: float            # log-log slope of stds against n_paths
    gap: float              # |mean at largest n - grid value|
    within: bool            # gap <= 3 se (or exact when the payoff is deterministic)
    constant: bool


def _interp(field_row: np.ndarray, xs: np.ndarray, x_min: float, dx: float, n: int):
    s = np.clip((xs - x_min) / dx, 0.0, n - 1.0)
    lo = np.minimum(np.floor(s).astype(np.int64), n - 2)
    fr = s - lo
    return (1.0 - fr) * field_row[lo] + fr * field_row[lo + 1]


def _simulate(pb: GameProblem, sol, u_policy, v_policy, x0: float, n: int, seed: int) -> np.ndarray:
    """Per-path ``phi(X_T) + sum f dt`` with (Y, Z, K) read off the grid solution."""
    cs, levy, space, time = pb.cs, pb.levy, pb.space, pb.time
    paths = sample_paths(time, levy, n, seed)
    X = np.full(n, float(x0))
    J = np.zeros(n)
    dt = time.dt
    lw = levy.l * levy.lam
    nn = space.n_nodes
    for k in range(time.n_steps):
        t = time.time(k)
        y = _interp(sol.Y[k], X, space.x_min, space.dx, nn)
        z = _interp(sol.Z[k], X, space.x_min, space.dx, nn)
        kb = np.zeros(n)
        for i in range(levy.n_atoms):
            kb += lw[i] * _interp(sol.K[k][:, i], X, space.x_min, space.dx, nn)
        node = np.clip(np.rint((X - space.x_min) / space.dx).astype(np.int64), 0, nn - 1)
        u = policy_slice(u_policy, k, nn)[node]
        v = policy_slice(v_policy, k, nn)[node]
        env = {"t": np.full(n, t), "x": X, "y": y, "z": z, "u": u, "v": v}
        J += dt * cs.f.vector(**env, k=kb)
        step = cs.b.vector(**env) * dt + cs.sigma.vector(**env) * paths.brownian_increments[:, k]
        for i, e in enumerate(levy.atoms):
            h = cs.h.vector(**env, e=np.full(n, e))
            step = step + h * (paths.jump_counts[:, k, i] - levy.lam[i] * dt)
        X = X + step
    return J + cs.phi.vector(x=X)


def _stream(seed: int, n: int) -> int:
    # separate stream per (seed, sample size) so the spreads at different sizes are independent
    return seed * 1_000_003 + n


def expected_value_reduction(problem: GameProblem, policies=None, n_paths=SWEEP,
                             seeds=range(10), *, node: int | None = None) -> EVReport:
    """Monte Carlo check of ``Y_0 = E[phi(X_T) + int f dt]`` for fixed feedback policies.

    ``policies`` is ``(u_policy, v_policy)`` in any form accepted by the FBSDE
    solvers (default: the first control pair). The forward state is simulated
    by Euler steps with ``(Y, Z, K)`` interpolated from the grid solution, so
    the estimate converges to the grid value as ``n_paths`` grows up to the
    time-discretisation error.
    """
    pb = problem
    u_pol, v_pol = policies if policies is not None else _first_pair(pb)
    sol = chain_solve(pb.cs, pb.levy, pb.time, pb.space, u_pol, v_pol, pb.opts).solution
    node = pb.space.n_nodes // 2 if node is None else int(node)
    x0 = float(pb.space.x[node])
    grid_value = float(sol.Y[0, node])
    sizes = tuple(int(n) for n in np.atleast_1d(n_paths))
    seeds = tuple(int(s) for s in seeds)
    est, means, stds, ses = [], [], [], []
    for n in sizes:
        vals, se = [], []
        for s in seeds:
            J = _simulate(pb, sol, u_pol, v_pol, x0, n, _stream(s, n))
            vals.append(float(J.mean()))
            se.append(float(J.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
        est.append(tuple(vals))
        means.append(float(np.mean(vals)))
        stds.append(float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
        ses.append(float(np.mean(se)))
    constant = max(stds) <= 1e-12 * max(1.0, abs(grid_value))
    if constant or len(sizes) < 2:
        slope = math.nan
    else:
        slope = float(np.polyfit(np.log(sizes), np.log(stds), 1)[0])
    gap = abs(means[-1] - grid_value)
    within = gap <= 3.0 * ses[-1] / math.sqrt(len(seeds)) + 1e-12 * max(1.0, abs(grid_value))
    return EVReport(grid_value, sizes, tuple(est), tuple(means), tuple(stds), tuple(ses), slope, gap,
                    bool(within), bool(constant))
