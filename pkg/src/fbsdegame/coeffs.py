"""Model coefficients and sampling-based assumption certificates.

All checks draw probe points from a counter-based generator in one block of
shape ``(probes, columns)``, so a larger budget extends a smaller one and
every reported maximum is a running maximum in the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .config import ConfigError, ConfigText, parse_config
from .expr import EvaluationError, Expression, ExpressionError, evaluate, parse_expression
from .grids import ControlGrid
from .stochastics import LevyModel, make_rng

__all__ = [
    "CoefficientSet", "H22Report", "MonotonicityCert", "SmallnessCert", "SLOTS",
    "check_h22", "check_h23", "check_h31", "evaluate", "lipschitz_bound", "parse_coefficients",
]

SLOTS = {
    "b": "txyzuv",
    "sigma": "txyzuv",
    "h": "txyzuve",
    "f": "txyzkuv",
    "phi": "x",
    "l": "e",
}
STATE = ("x", "y", "z", "k")
INVARIANTS = ("roundtrip", "h23_running_max", "lipschitz_estimate")


@dataclass(frozen=True)
class CoefficientSet:
    b: Expression
    sigma: Expression
    h: Expression
    f: Expression
    phi: Expression
    l: Expression
    lip_constants: Mapping[str, float] = field(default_factory=dict)
    rho_bound: float = 0.0

    def expressions(self) -> dict[str, Expression]:
        return {name: getattr(self, name) for name in SLOTS}

    @property
    def decoupled(self) -> bool:
        """Forward coefficients free of the backward pair (y, z)."""
        return not any(e.depends_on("y", "z") for e in (self.b, self.sigma, self.h))

    @property
    def special(self) -> bool:
        """sigma and h free of (y, z); k never enters them by construction."""
        return not any(e.depends_on("y", "z", "k") for e in (self.sigma, self.h))

    def lip(self, name: str, var: str) -> float:
        return float(self.lip_constants.get(f"{name}.{var}", 0.0))


def parse_coefficients(source: str | ConfigText) -> CoefficientSet:
    """Parse ``[model]`` (b, sigma, h, f, phi) and ``l`` from ``[levy]``.

    Omitted b, sigma, h, f and l default to ``"0"``; phi is required.
    """
    cfg = parse_config(source) if isinstance(source, str) else source
    out = {}
    for name, allowed in SLOTS.items():
        section = "levy" if name == "l" else "model"
        entry = cfg.entry(section, name)
        if entry is None:
            if name == "phi":
                raise ConfigError("missing terminal coefficient phi in [model]")
            out[name] = parse_expression("0")
            continue
        if not entry.value.strip():
            raise ConfigError(f"empty coefficient {name}", entry.line, entry.column)
        out[name] = parse_expression(entry.value, allowed=set(allowed), line=entry.line, column=entry.column)
    misplaced = cfg.entry("model", "l")
    if misplaced is not None:
        raise ConfigError("l belongs in [levy], not [model]", misplaced.line, 1)
    extra = set(cfg.section("model")) - set(SLOTS)
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown coefficient {key!r} in [model]", cfg.entry("model", key).line)
    return CoefficientSet(**out)


# --- probe sampling ------------------------------------------------------------


@dataclass(frozen=True)
class _Probes:
    base: dict
    alt: dict  # alternative values for x, y, z and the per-atom k
    ka: np.ndarray
    ka2: np.ndarray
    e_idx: np.ndarray


def _probes(n: int, seed: int, box: float, t_range, controls: ControlGrid | None, n_atoms: int) -> _Probes:
    rng = make_rng(seed)
    cols = 12 + 2 * n_atoms
    r = rng.random((n, cols))
    lo, hi = t_range
    sc = lambda c: box * (2.0 * r[:, c] - 1.0)  # noqa: E731
    base = {"t": lo + (hi - lo) * r[:, 0], "x": sc(1), "y": sc(2), "z": sc(3), "k": sc(4)}
    if controls is None:
        base["u"] = 2.0 * r[:, 5] - 1.0
        base["v"] = 2.0 * r[:, 6] - 1.0
    else:
        U = np.asarray(controls.U_values)
        V = np.asarray(controls.V_values)
        base["u"] = U[np.minimum((r[:, 5] * U.size).astype(int), U.size - 1)]
        base["v"] = V[np.minimum((r[:, 6] * V.size).astype(int), V.size - 1)]
    alt = {"x": sc(7), "y": sc(8), "z": sc(9), "k": sc(10)}
    e_idx = np.minimum((r[:, 11] * max(n_atoms, 1)).astype(int), max(n_atoms - 1, 0))
    ka = box * (2.0 * r[:, 12:12 + n_atoms] - 1.0)
    ka2 = box * (2.0 * r[:, 12 + n_atoms:12 + 2 * n_atoms] - 1.0)
    return _Probes(base, alt, ka, ka2, e_idx)


def _eval(expr: Expression, env: dict) -> np.ndarray:
    return expr.vector(**{k: env[k] for k in expr.variables})


def _ratio_max(num: np.ndarray, den: np.ndarray) -> float:
    ok = np.abs(den) > 1e-12
    if not ok.any():
        return 0.0
    return float(np.max(np.abs(num[ok]) / np.abs(den[ok])))


@dataclass(frozen=True)
class H22Report:
    lipschitz: dict  # "coef.var" -> estimate
    growth: dict     # coef -> sup |c| / (1 + |x| + |y| + |z| + |k|)
    rho: tuple       # per-atom scale of h
    k_nondecreasing: bool
    passed: bool
    lip_cap: float
    growth_cap: float
    probes: int
    box: float
    seed: int

    def apply(self, cs: CoefficientSet) -> CoefficientSet:
        """Attach the estimates to ``cs`` as metadata."""
        rho = max((r / min(1.0, abs(e)) for e, r in self.rho), default=0.0)
        return replace(cs, lip_constants=dict(self.lipschitz), rho_bound=float(rho))


def check_h22(cs: CoefficientSet, levy: LevyModel, probes: int = 1000, seed: int = 0, *,
              box: float = 5.0, t_range=(0.0, 1.0), controls: ControlGrid | None = None,
              lip_cap: float = 10.0, growth_cap: float = 10.0) -> H22Report:
    """Empirical Lipschitz and linear-growth ratios over a probe box."""
    if probes < 100:
        raise ValueError("check_h22 needs at least 100 probe pairs")
    P = _probes(probes, seed, box, t_range, controls, levy.n_atoms)
    env = dict(P.base)
    norm = 1.0 + sum(np.abs(env[v]) for v in STATE)
    lip: dict[str, float] = {}
    growth: dict[str, float] = {}

    for name in ("b", "sigma", "f", "phi"):
        expr = getattr(cs, name)
        c0 = _eval(expr, env)
        growth[name] = float(np.max(np.abs(c0) / (1.0 + np.abs(env["x"])) if name == "phi" else np.abs(c0) / norm))
        for var in (("x",) if name == "phi" else STATE if name == "f" else STATE[:3]):
            if not expr.depends_on(var):
                lip[f"{name}.{var}"] = 0.0
                continue
            env2 = dict(env)
            env2[var] = P.alt[var]
            lip[f"{name}.{var}"] = _ratio_max(_eval(expr, env2) - c0, P.alt[var] - env[var])

    rho = []
    lip_h = dict.fromkeys(STATE[:3], 0.0)
    growth["h"] = 0.0
    for i, e in enumerate(levy.atoms):
        env_e = dict(env, e=np.full(probes, e))
        c0 = _eval(cs.h, env_e)
        worst = float(np.max(np.abs(c0) / (1.0 + np.abs(env["x"]) + np.abs(env["y"]))))
        growth["h"] = max(growth["h"], float(np.max(np.abs(c0) / norm)))
        for var in STATE[:3]:
            if cs.h.depends_on(var):
                env2 = dict(env_e)
                env2[var] = P.alt[var]
                q = _ratio_max(_eval(cs.h, env2) - c0, P.alt[var] - env[var])
                lip_h[var] = max(lip_h[var], q)
                worst = max(worst, q)
        rho.append((e, worst))
    for var, q in lip_h.items():
        lip[f"h.{var}"] = q

    k_ok = True
    if cs.f.depends_on("k"):
        f1 = _eval(cs.f, env)
        f2 = _eval(cs.f, dict(env, k=P.alt["k"]))
        k_ok = bool(np.all((f1 - f2) * (env["k"] - P.alt["k"]) >= -1e-12))

    values = list(lip.values()) + list(growth.values())
    passed = (
        all(math.isfinite(v) for v in values)
        and all(v <= lip_cap for v in lip.values())
        and all(v <= growth_cap for v in growth.values())
        and k_ok
    )
    return H22Report(lip, growth, tuple(rho), k_ok, passed, lip_cap, growth_cap, probes, box, seed)


# --- monotonicity ---------------------------------------------------------------


@dataclass(frozen=True)
class MonotonicityCert:
    G: float = 1.0
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    mu1: float = 0.0
    verified: bool = False
    worst_violation: float = math.nan

    def __post_init__(self):
        if self.G == 0 or not math.isfinite(self.G):
            raise ValueError("G must be a nonzero finite scalar")
        for name in ("beta1", "beta2", "beta3", "mu1"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        b1, b2, b3, m1 = self.beta1, self.beta2, self.beta3, self.mu1
        bad = [txt for ok, txt in (
            (b1 + b2 > 0, "beta1 + beta2 > 0"),
            (b1 + b3 > 0, "beta1 + beta3 > 0"),
            (b2 + m1 > 0, "beta2 + mu1 > 0"),
            (b3 + m1 > 0, "beta3 + mu1 > 0"),
        ) if not ok]
        if bad:
            raise ValueError("monotonicity certificate constraint violated: " + ", ".join(bad))


def check_h23(cs: CoefficientSet, levy: LevyModel, cert: MonotonicityCert, probes: int = 1000,
              seed: int = 0, *, box: float = 5.0, t_range=(0.0, 1.0),
              controls: ControlGrid | None = None) -> MonotonicityCert:
    """Largest violation of both monotonicity inequalities over probe pairs.

    ``worst_violation`` is ``max(lhs - rhs)``; it is negative when every probe
    satisfies both inequalities strictly.
    """
    cert = MonotonicityCert(cert.G, cert.beta1, cert.beta2, cert.beta3, cert.mu1)
    P = _probes(probes, seed, box, t_range, None, levy.n_atoms)
    G = cert.G
    lam, lv = levy.lam, levy.l
    one = {k: P.base[k] for k in ("t", "x", "y", "z")}
    two = {"t": P.base["t"], "x": P.alt["x"], "y": P.alt["y"], "z": P.alt["z"]}
    dx, dy, dz = one["x"] - two["x"], one["y"] - two["y"], one["z"] - two["z"]
    if levy.n_atoms:
        k1, k2 = P.ka @ (lv * lam), P.ka2 @ (lv * lam)
        dk = P.ka - P.ka2
    else:
        k1 = k2 = np.zeros(probes)
        dk = np.zeros((probes, 0))
    ctrl = controls or ControlGrid()
    worst = -math.inf
    for u, v in ctrl.pairs:
        cu = {"u": np.full(probes, u), "v": np.full(probes, v)}
        e1, e2 = dict(one, **cu), dict(two, **cu)
        dg = _eval(cs.f, dict(e1, k=k1)) - _eval(cs.f, dict(e2, k=k2))
        db = _eval(cs.b, e1) - _eval(cs.b, e2)
        ds = _eval(cs.sigma, e1) - _eval(cs.sigma, e2)
        lhs = -G * dg * dx + G * db * dy + G * ds * dz
        rhs = -cert.beta1 * (G * dx) ** 2 - cert.beta2 * ((G * dy) ** 2 + (G * dz) ** 2)
        for i, e in enumerate(levy.atoms):
            ee = np.full(probes, e)
            dh = _eval(cs.h, dict(e1, e=ee)) - _eval(cs.h, dict(e2, e=ee))
            lhs = lhs + lam[i] * G * dh * dk[:, i]
            rhs = rhs - cert.beta3 * lam[i] * (G * dk[:, i]) ** 2
        worst = max(worst, float(np.max(lhs - rhs)))
    dphi = _eval(cs.phi, {"x": one["x"]}) - _eval(cs.phi, {"x": two["x"]})
    worst = max(worst, float(np.max(cert.mu1 * (G * dx) ** 2 - dphi * G * dx)))
    return replace(cert, verified=worst <= 1e-10, worst_violation=worst)


# --- smallness -------------------------------------------------------------------


@dataclass(frozen=True)
class SmallnessCert:
    L_sigma: float
    C_tilde_h: float
    threshold: float
    holds: bool
    L_h: tuple = ()


def check_h31(cs: CoefficientSet, levy: LevyModel, probes: int = 1000, seed: int = 0, *,
              threshold: float = 0.25, box: float = 5.0, t_range=(0.0, 1.0),
              controls: ControlGrid | None = None) -> SmallnessCert:
    """z-sensitivity of sigma and of h per atom, compared with ``threshold``."""
    P = _probes(max(probes, 1), seed, box, t_range, controls, levy.n_atoms)
    env = dict(P.base)
    dz = P.alt["z"] - env["z"]
    L_sigma = 0.0
    if cs.sigma.depends_on("z"):
        L_sigma = _ratio_max(_eval(cs.sigma, dict(env, z=P.alt["z"])) - _eval(cs.sigma, env), dz)
    L_h = []
    for e in levy.atoms:
        if cs.h.depends_on("z"):
            env_e = dict(env, e=np.full(probes, e))
            L_h.append(_ratio_max(_eval(cs.h, dict(env_e, z=P.alt["z"])) - _eval(cs.h, env_e), dz))
        else:
            L_h.append(0.0)
    L2 = np.asarray(L_h) ** 2
    C_tilde = float(max(L2.max(initial=0.0), float(np.sum(L2 * levy.lam)))) if L_h else 0.0
    holds = L_sigma <= threshold and C_tilde <= threshold
    return SmallnessCert(float(L_sigma), C_tilde, float(threshold), bool(holds), tuple(L_h))


# --- a-priori constants --------------------------------------------------------------


def lipschitz_bound(cs: CoefficientSet, levy: LevyModel, horizon: float) -> float:
    """Lipschitz-in-x constant for the value built from the coefficient metadata.

    ``(L_phi + T L_f,x) * exp(T * (sum of the b, sigma, f Lipschitz constants
    in (x, y, z), L_f,k sum(lambda l) and sum(lambda rho)))``.
    """
    L = cs.lip
    rate = (
        L("b", "x") + L("b", "y") + L("b", "z")
        + L("sigma", "x") + L("sigma", "y") + L("sigma", "z")
        + L("f", "y") + L("f", "z")
        + L("f", "k") * float(np.sum(levy.lam * levy.l))
        + float(np.sum(levy.lam * cs.rho_bound * np.minimum(1.0, np.abs(levy.e))))
    )
    return (L("phi", "x") + horizon * L("f", "x")) * math.exp(horizon * rate)


def growth_bound(cs: CoefficientSet, levy: LevyModel, horizon: float, growth: Mapping[str, float]) -> float:
    """Constant C with |Y| <= C (1 + |x|) from the growth ratios and Lipschitz data."""
    base = max(growth.get("phi", 0.0), 0.0) + horizon * max(growth.get("f", 0.0), 0.0)
    return max(1.0, base + lipschitz_bound(cs, levy, horizon)) * math.exp(horizon * max(growth.get("b", 0.0), 0.0))


__all__ += ["ExpressionError", "EvaluationError", "growth_bound"]
