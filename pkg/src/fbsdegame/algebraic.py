"""Scalar representation equation ``z = xi + p * sigma(s, x, y, z, u, v)``.

For ``p >= 0`` and ``sigma`` nonincreasing in ``z`` the map
``z -> z - xi - p sigma(z)`` is strictly increasing, so its root is unique
and bracketing always finds it. Fixed-point and damped iterations are tried
first because they are cheaper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .coeffs import CoefficientSet
from .expr import Expression
from .stochastics import make_rng

INVARIANTS = ("representation", "uniqueness")

RES_TOL = 1e-12
ITER_MAX = 200
DOUBLINGS = 60

__all__ = [
    "AlgebraicQuery", "RepresentationError", "RepresentationReport",
    "bracket_root", "representation_bounds", "solve_batch", "solve_representation",
]


class RepresentationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AlgebraicQuery:
    """One query; ``y`` is the full y-argument handed to sigma."""

    s: float
    x: float
    y: float
    xi: float
    p: float
    u: float = 0.0
    v: float = 0.0


def _sigma_z(sigma: Expression, q: AlgebraicQuery):
    env = {"t": q.s, "x": q.x, "y": q.y, "u": q.u, "v": q.v}
    return lambda z: sigma(**env, z=z) if sigma.depends_on("z") else sigma(**env, z=0.0)


def _check_sign(sigma: Expression, p: float):
    if p < 0 and sigma.depends_on("z"):
        raise RepresentationError(f"gradient p={p!r} < 0 with z-dependent sigma; the equation needs p >= 0")


def _local_lip(sig, centre: float, width: float) -> float:
    zs = centre + width * np.linspace(-1.0, 1.0, 33)
    vals = np.array([sig(z) for z in zs])
    return float(np.max(np.abs(np.diff(vals)) / np.diff(zs)))


def bracket_root(q: AlgebraicQuery, cs: CoefficientSet, bracket: tuple[float, float] | None = None) -> float:
    """Root of ``z - xi - p sigma(z)`` by bracket doubling and Brent's method."""
    _check_sign(cs.sigma, q.p)
    sig = _sigma_z(cs.sigma, q)
    F = lambda z: z - q.xi - q.p * sig(z)  # noqa: E731
    if bracket is None:
        M = 1.0 + abs(sig(q.xi))
        lo, hi = q.xi - q.p * M - 1e-12, q.xi + q.p * M + 1e-12
    else:
        lo, hi = bracket
    flo, fhi = F(lo), F(hi)
    for _ in range(DOUBLINGS):
        if flo <= 0.0 <= fhi:
            break
        mid, half = 0.5 * (lo + hi), hi - lo
        lo, hi = mid - half, mid + half
        flo, fhi = F(lo), F(hi)
    else:
        raise RepresentationError(f"no sign change in [{lo:.3g}, {hi:.3g}] after {DOUBLINGS} doublings")
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    z = brentq(F, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=ITER_MAX)
    return _polish(z, F)


def _polish(z, F):
    # a couple of secant corrections push the residual to the rounding floor
    r = F(z)
    for _ in range(3):
        if abs(r) <= RES_TOL * 0.01:
            break
        h = 1e-7 * max(1.0, abs(z))
        d = (F(z + h) - r) / h
        if d <= 0.0:
            break
        z2 = z - r / d
        r2 = F(z2)
        if abs(r2) >= abs(r):
            break
        z, r = z2, r2
    return z


def solve_representation(q: AlgebraicQuery, cs: CoefficientSet, lip_z: float | None = None) -> float:
    """Unique ``z`` with ``|z - xi - p sigma(..., z, ...)| <= 1e-12``."""
    sigma = cs.sigma
    if not sigma.depends_on("z"):
        return q.xi + q.p * _sigma_z(sigma, q)(0.0)
    _check_sign(sigma, q.p)
    sig = _sigma_z(sigma, q)
    F = lambda z: z - q.xi - q.p * sig(z)  # noqa: E731
    if lip_z is None:
        lip_z = cs.lip("sigma", "z") or _local_lip(sig, q.xi, 10.0 + abs(q.xi))
    pL = q.p * lip_z
    damp = 1.0 if pL < 1.0 else 1.0 / (1.0 + pL)
    z = q.xi
    best, best_r = z, math.inf
    for _ in range(ITER_MAX):
        r = F(z)
        if not math.isfinite(r):
            break
        if abs(r) < best_r:
            best, best_r = z, abs(r)
        if abs(r) <= 0.01 * RES_TOL:
            return z
        z = z - damp * r
    if best_r <= RES_TOL:
        return best
    z = bracket_root(q, cs)
    r = F(z)
    if abs(r) > RES_TOL:
        raise RepresentationError(f"residual {abs(r):.3e} above {RES_TOL:g} at {q}")
    return z


def solve_batch(sigma: Expression, s, x, y, xi, p, u, v, lip_z: float = 0.0):
    """Vectorised solve over nodes; returns ``(z, residual)``.

    For z-independent ``sigma`` this is ``xi + p * sigma`` exactly. Nodes
    that the (damped) iteration leaves unconverged go through :func:`bracket_root`.
    """
    shape = np.broadcast_shapes(*(np.shape(a) for a in (s, x, y, xi, p, u, v)))
    env = {k: np.broadcast_to(np.asarray(a, dtype=float), shape) for k, a in
           (("t", s), ("x", x), ("y", y), ("u", u), ("v", v))}
    xi = np.broadcast_to(np.asarray(xi, dtype=float), shape)
    p = np.broadcast_to(np.asarray(p, dtype=float), shape)
    if not sigma.depends_on("z"):
        z = xi + p * sigma.vector(**env, z=np.zeros(shape))
        return z, np.zeros(shape)
    if np.any(p < 0):
        j = int(np.argmax(p < 0))
        raise RepresentationError(f"gradient p={p.flat[j]!r} < 0 at index {j} with z-dependent sigma")
    pL = p * lip_z
    damp = np.where(pL < 1.0, 1.0, 1.0 / (1.0 + pL))
    z = xi.copy()
    r = z - xi - p * sigma.vector(**env, z=z)
    for _ in range(ITER_MAX):
        done = np.abs(r) <= 0.01 * RES_TOL
        if done.all():
            break
        z = np.where(done, z, z - damp * r)
        r = z - xi - p * sigma.vector(**env, z=z)
    bad = np.flatnonzero(~(np.abs(r) <= RES_TOL))
    if bad.size:
        cs = _SigmaOnly(sigma)
        z = z.copy()
        r = r.copy()
        for j in bad:
            idx = np.unravel_index(j, shape)
            q = AlgebraicQuery(env["t"][idx], env["x"][idx], env["y"][idx], xi[idx], p[idx],
                               env["u"][idx], env["v"][idx])
            z[idx] = bracket_root(q, cs)
            r[idx] = z[idx] - xi[idx] - p[idx] * _sigma_z(sigma, q)(z[idx])
    return z, np.abs(r)


class _SigmaOnly:
    """Minimal stand-in exposing ``sigma`` for the bracketing helper."""

    def __init__(self, sigma):
        self.sigma = sigma


# --- bounds ------------------------------------------------------------------------


@dataclass(frozen=True)
class RepresentationReport:
    n: int
    max_residual: float
    growth_ratio: float      # max |z| / (1 + |x| + |y| + |xi|)
    growth_constant: float   # C in |z| <= C (1 + |x| + |y| + |xi|)
    growth_holds: bool
    lip_xi: float            # max difference quotient of z in xi
    lip_y: float
    lip_xi_bound: float


def representation_bounds(cs: CoefficientSet, probes: int = 1000, seed: int = 0, *,
                          p_range=(0.0, 3.0), xi_range=(-10.0, 10.0), box: float = 5.0,
                          controls=None) -> RepresentationReport:
    """Solve random queries and check residual, linear growth and Lipschitz quotients.

    With ``m = 1 - p_max * max(0, sup d sigma/dz)`` and ``G`` the growth ratio
    of ``sigma`` at ``z = 0``, the solution obeys
    ``|z| <= max(1, p_max G) / m * (1 + |x| + |y| + |xi|)`` and is ``1/m``
    Lipschitz in ``xi``.
    """
    rng = make_rng(seed)
    r = rng.random((probes, 9))
    s = r[:, 0]
    x = box * (2 * r[:, 1] - 1)
    y = box * (2 * r[:, 2] - 1)
    xi = xi_range[0] + (xi_range[1] - xi_range[0]) * r[:, 3]
    p = p_range[0] + (p_range[1] - p_range[0]) * r[:, 4]
    if controls is None:
        u = 2 * r[:, 5] - 1
        v = 2 * r[:, 6] - 1
    else:
        U, V = np.asarray(controls.U_values), np.asarray(controls.V_values)
        u = U[np.minimum((r[:, 5] * U.size).astype(int), U.size - 1)]
        v = V[np.minimum((r[:, 6] * V.size).astype(int), V.size - 1)]
    xi2 = xi_range[0] + (xi_range[1] - xi_range[0]) * r[:, 7]
    y2 = box * (2 * r[:, 8] - 1)

    def solve(yy, xx):
        out = np.empty(probes)
        res = np.empty(probes)
        for j in range(probes):
            q = AlgebraicQuery(s[j], x[j], yy[j], xx[j], p[j], u[j], v[j])
            out[j] = solve_representation(q, cs)
            res[j] = abs(out[j] - q.xi - q.p * _sigma_z(cs.sigma, q)(out[j]))
        return out, res

    z, res = solve(y, xi)
    z_xi, res2 = solve(y, xi2)
    z_y, res3 = solve(y2, xi)

    env = {"t": s, "x": x, "y": y, "u": u, "v": v}
    sig0 = cs.sigma.vector(**env, z=np.zeros(probes))
    G = float(np.max(np.abs(sig0) / (1 + np.abs(x) + np.abs(y))))
    Lplus = 0.0
    if cs.sigma.depends_on("z"):
        za, zb = box * (2 * rng.random(probes) - 1), box * (2 * rng.random(probes) - 1)
        num = cs.sigma.vector(**env, z=za) - cs.sigma.vector(**env, z=zb)
        ok = np.abs(za - zb) > 1e-12
        Lplus = max(0.0, float(np.max(num[ok] / (za - zb)[ok])))
    pmax = float(np.max(p))
    m = 1.0 - pmax * Lplus
    C = max(1.0, pmax * G) / m if m > 0 else math.inf
    ratio = float(np.max(np.abs(z) / (1 + np.abs(x) + np.abs(y) + np.abs(xi))))
    with np.errstate(divide="ignore", invalid="ignore"):
        dq = np.abs(z - z_xi) / np.abs(xi - xi2)
        dy = np.abs(z - z_y) / np.abs(y - y2)
    lip_xi = float(np.nanmax(np.where(np.abs(xi - xi2) > 1e-9, dq, 0.0)))
    lip_y = float(np.nanmax(np.where(np.abs(y - y2) > 1e-9, dy, 0.0)))
    max_res = float(max(res.max(), res2.max(), res3.max()))
    return RepresentationReport(probes, max_res, ratio, C, bool(ratio <= C and max_res <= RES_TOL),
                                lip_xi, lip_y, 1.0 / m if m > 0 else math.inf)
