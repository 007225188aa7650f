"""Lower and upper value fields by stagewise dynamic programming.

At each slice every constant control pair ``(u, v)`` is pushed through the
one-step backward semigroup with the next slice as terminal field. The lower
value takes ``max_u min_v`` node by node, the upper value ``min_v max_u``.
Ties go to the first index of the declared control list.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .coeffs import (
    CoefficientSet, H22Report, MonotonicityCert, SmallnessCert, check_h22, check_h23, check_h31,
    parse_coefficients,
)
from .config import ConfigError, ConfigText
from .fbsde import SemigroupQuery, SolverOptions, chain_solve, solve_fbsde_small
from .grids import ControlGrid, SpaceGrid, TimeGrid
from .stochastics import LevyModel, discretize_levy

INVARIANTS = ("ordering", "comparison", "monotonicity", "lipschitz", "holder", "determinism", "dpp", "isaacs")

__all__ = [
    "GameProblem", "ProblemError", "ValueField", "dpp_consistency", "isaacs_gap",
    "lower_value", "problem_from_config", "upper_value",
]


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class GameProblem:
    cs: CoefficientSet
    levy: LevyModel
    controls: ControlGrid
    cert: MonotonicityCert
    time: TimeGrid
    space: SpaceGrid
    opts: SolverOptions = SolverOptions()
    smallness: SmallnessCert | None = None
    h22: H22Report | None = None
    exemption: str = ""
    settings: dict = field(default_factory=dict, compare=False)
    digest: str = ""

    def with_grid(self, n_steps: int | None = None, n_nodes: int | None = None) -> "GameProblem":
        time = TimeGrid(self.time.t0, self.time.T, n_steps or self.time.n_steps)
        space = SpaceGrid(self.space.x_min, self.space.x_max, n_nodes or self.space.n_nodes)
        return replace(self, time=time, space=space)

    def with_terminal(self, phi) -> "GameProblem":
        from .expr import parse_expression
        expr = parse_expression(phi, allowed={"x"}) if isinstance(phi, str) else phi
        return replace(self, cs=replace(self.cs, phi=expr))


def certify(cs: CoefficientSet, levy: LevyModel, controls: ControlGrid, cert: MonotonicityCert,
            time: TimeGrid, *, probes: int = 1000, seed: int = 0, box: float = 5.0,
            lip_cap: float = 10.0, growth_cap: float = 10.0, threshold: float = 0.25):
    """Run the three coefficient certificates; returns ``(cs, h22, cert, smallness, exemption)``."""
    t_range = (time.t0, time.T)
    h22 = check_h22(cs, levy, probes, seed, box=box, t_range=t_range, controls=controls,
                    lip_cap=lip_cap, growth_cap=growth_cap)
    cs = h22.apply(cs)
    cert = check_h23(cs, levy, cert, probes, seed, box=box, t_range=t_range, controls=controls)
    small = check_h31(cs, levy, probes, seed, threshold=threshold, box=box, t_range=t_range, controls=controls)
    exemption = ""
    if not cert.verified:
        if cs.decoupled:
            exemption = ("monotonicity certificate not verified "
                         f"(worst violation {cert.worst_violation:.3g}); accepted because b, sigma, h "
                         "do not depend on (y, z), so the forward equation is decoupled")
        else:
            raise ProblemError(
                f"monotonicity certificate not verified: worst violation {cert.worst_violation:.3g} > 1e-10")
    if not small.holds:
        raise ProblemError(
            f"smallness check failed: L_sigma={small.L_sigma:.3g}, C_h={small.C_tilde_h:.3g} "
            f"above threshold {small.threshold:g}")
    return cs, h22, cert, small, exemption


def problem_from_config(cfg: ConfigText, *, nt: int | None = None, nx: int | None = None,
                        check: bool = True) -> GameProblem:
    """Assemble a :class:`GameProblem`; config errors raise :class:`ConfigError`."""
    cs = parse_coefficients(cfg)
    atoms = cfg.floats("levy", "atoms")
    lam = cfg.floats("levy", "intensities")
    if len(atoms) != len(lam):
        raise ConfigError("[levy] atoms and intensities differ in length",
                          (cfg.entry("levy", "intensities") or cfg.entry("levy", "atoms")).line)
    try:
        levy = discretize_levy(list(zip(atoms, lam)), cs.l, cfg.float("levy", "C", 1.0))
        controls = ControlGrid(tuple(cfg.floats("controls", "U", (0.0,))),
                               tuple(cfg.floats("controls", "V", (0.0,))))
        time = TimeGrid(cfg.float("grid", "t0", 0.0), cfg.float("grid", "T", 1.0),
                        nt or cfg.int("grid", "n_steps", 100))
        space = SpaceGrid(cfg.float("grid", "x_min", -3.0), cfg.float("grid", "x_max", 3.0),
                          nx or cfg.int("grid", "n_nodes", 121))
        cert = MonotonicityCert(cfg.float("monotonicity", "G", 1.0), cfg.float("monotonicity", "beta1", 1.0),
                                cfg.float("monotonicity", "beta2", 0.0), cfg.float("monotonicity", "beta3", 0.0),
                                cfg.float("monotonicity", "mu1", 1.0))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    opts = SolverOptions(cfg.int("solver", "delta0_steps", 10), cfg.float("solver", "picard_tol", 1e-10),
                         cfg.int("solver", "picard_max", 100), cfg.float("solver", "cfl_safety", 0.9))
    settings = {
        "probes": cfg.int("solver", "probes", 1000),
        "box": cfg.float("solver", "box", 5.0),
        "lip_cap": cfg.float("solver", "lip_cap", 10.0),
        "growth_cap": cfg.float("solver", "growth_cap", 10.0),
        "smallness_threshold": cfg.float("solver", "smallness_threshold", 0.25),
        "verify": {k: e.value for k, e in cfg.section("verify").items()},
    }
    problem = GameProblem(cs, levy, controls, cert, time, space, opts, settings=settings, digest=cfg.digest())
    if check:
        cs2, h22, cert2, small, note = certify(
            cs, levy, controls, cert, time, probes=settings["probes"], box=settings["box"],
            lip_cap=settings["lip_cap"], growth_cap=settings["growth_cap"],
            threshold=settings["smallness_threshold"])
        problem = replace(problem, cs=cs2, cert=cert2, smallness=small, h22=h22, exemption=note)
    return problem


# --- value fields -------------------------------------------------------------------


@dataclass(frozen=True)
class ValueField:
    """Value samples on ``times`` x ``space``.

    ``argmax_u`` / ``argmin_v`` hold control indices per step and node (slice
    ``N`` has none); ``Z`` and ``K`` are taken at the selected pair.
    """

    values: np.ndarray
    kind: str
    argmax_u: np.ndarray
    argmin_v: np.ndarray
    times: np.ndarray
    space: SpaceGrid
    Z: np.ndarray | None = None
    K: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def x(self) -> np.ndarray:
        return self.space.x


def pair_table(problem: GameProblem, terminal: np.ndarray, k: int):
    """One-step values for every constant pair: arrays ``[u, v, node]`` (+ Z, K)."""
    U, V = problem.controls.U_values, problem.controls.V_values
    n, a = problem.space.n_nodes, problem.levy.n_atoms
    vals = np.empty((len(U), len(V), n))
    Zs = np.empty((len(U), len(V), n))
    Ks = np.empty((len(U), len(V), n, a))
    for i, u in enumerate(U):
        for j, v in enumerate(V):
            res = solve_fbsde_small(SemigroupQuery(k, 1, u, v, terminal), problem.cs, problem.levy,
                                    problem.time, problem.space, problem.opts)
            vals[i, j] = res.solution.Y[0]
            Zs[i, j] = res.solution.Z[0]
            Ks[i, j] = res.solution.K[0]
    return vals, Zs, Ks


def _select(vals: np.ndarray, kind: str):
    nodes = np.arange(vals.shape[2])
    if kind == "lower":
        iv_all = np.argmin(vals, axis=1)                       # [u, node]
        inner = np.take_along_axis(vals, iv_all[:, None, :], axis=1)[:, 0, :]
        iu = np.argmax(inner, axis=0)
        iv = iv_all[iu, nodes]
    else:
        iu_all = np.argmax(vals, axis=0)                       # [v, node]
        inner = np.take_along_axis(vals, iu_all[None, :, :], axis=0)[0]
        iv = np.argmin(inner, axis=0)
        iu = iu_all[iv, nodes]
    return iu, iv, vals[iu, iv, nodes]


def _dp(problem: GameProblem, kind: str, *, start: int = 0, terminal=None) -> ValueField:
    if kind not in ("lower", "upper"):
        raise ValueError(f"kind must be 'lower' or 'upper', got {kind!r}")
    N, n, a = problem.time.n_steps, problem.space.n_nodes, problem.levy.n_atoms
    x = problem.space.x
    W = np.empty((N + 1, n))
    Z = np.zeros((N + 1, n))
    K = np.zeros((N + 1, n, a))
    iu = np.zeros((N, n), dtype=np.int64)
    iv = np.zeros((N, n), dtype=np.int64)
    W[N] = problem.cs.phi.vector(x=x) if terminal is None else np.asarray(terminal, dtype=float)
    nodes = np.arange(n)
    for k in range(N - 1, start - 1, -1):
        vals, Zs, Ks = pair_table(problem, W[k + 1], k)
        iu[k], iv[k], W[k] = _select(vals, kind)
        Z[k] = Zs[iu[k], iv[k], nodes]
        K[k] = Ks[iu[k], iv[k], nodes]
    W, Z, K, iu, iv = W[start:], Z[start:], K[start:], iu[start:], iv[start:]
    for arr in (W, Z, K, iu, iv):
        arr.setflags(write=False)
    return ValueField(W, kind, iu, iv, problem.time.times[start:], problem.space, Z, K)


def lower_value(problem: GameProblem) -> ValueField:
    return _dp(problem, "lower")


def upper_value(problem: GameProblem) -> ValueField:
    return _dp(problem, "upper")


def value(problem: GameProblem, kind: str) -> ValueField:
    return _dp(problem, kind)


# --- DPP and Isaacs --------------------------------------------------------------------


@dataclass(frozen=True)
class DPPReport:
    sup_gap: float
    composition_gap: float  # direct vs two-stage dynamic programming
    policy_gap: float       # direct vs saddle feedback pushed through one multi-step window
    split_slice: int


def dpp_consistency(problem: GameProblem, split_slice: int, kind: str = "lower",
                    direct: ValueField | None = None) -> DPPReport:
    """Compare the value at slice 0 computed directly and through ``split_slice``.

    Stage two solves the game on ``[t_split, T]`` as its own problem; stage
    one solves on ``[t0, t_split]`` with that field as terminal data. In
    addition the selected feedback controls of the direct run are pushed
    through the chained multi-step semigroup from ``W(t_split)``.
    """
    N = problem.time.n_steps
    if not 0 < split_slice < N:
        raise ValueError(f"split slice must lie strictly inside 1..{N - 1}")
    direct = direct or _dp(problem, kind)
    t_split = problem.time.time(split_slice)
    late = replace(problem, time=TimeGrid(t_split, problem.time.T, N - split_slice))
    stage2 = _dp(late, kind)
    early = replace(problem, time=TimeGrid(problem.time.t0, t_split, split_slice))
    stage1 = _dp(early, kind, terminal=stage2.values[0])
    comp_gap = float(np.max(np.abs(stage1.values[0] - direct.values[0])))

    U = np.asarray(problem.controls.U_values)
    V = np.asarray(problem.controls.V_values)
    upol = U[direct.argmax_u[:split_slice]]
    vpol = V[direct.argmin_v[:split_slice]]
    pushed = chain_solve(problem.cs, problem.levy, early.time, problem.space, upol, vpol,
                         problem.opts, terminal=direct.values[split_slice])
    pol_gap = float(np.max(np.abs(pushed.solution.Y[0] - direct.values[0])))
    return DPPReport(max(comp_gap, pol_gap), comp_gap, pol_gap, split_slice)


@dataclass(frozen=True)
class IsaacsReport:
    max_gap: float
    gap_field: np.ndarray
    value_exists: bool
    tol: float


def isaacs_gap(lower: ValueField, upper: ValueField, tol: float | None = None) -> IsaacsReport:
    """``sup |U - W|``; the game has a value on the grid when it is within ``tol`` (default 4 dt)."""
    if lower.values.shape != upper.values.shape or lower.space != upper.space \
            or not np.array_equal(lower.times, upper.times):
        raise ValueError("value fields live on different grids")
    if tol is None:
        tol = 4.0 * float(lower.times[1] - lower.times[0])
    gap = upper.values - lower.values
    mg = float(np.max(np.abs(gap)))
    return IsaacsReport(mg, gap, mg <= tol, tol)
