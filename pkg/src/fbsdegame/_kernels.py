"""Hot numeric kernels.

Every kernel has two implementations with identical semantics: an explicit
loop version compiled with ``numba.njit`` and a vectorised numpy version.
``FBSDEGAME_NUMBA=0`` in the environment (or numba missing) selects numpy.
Both tables stay importable so tests and the benchmark can compare them.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

SNAP = 1e-9


def _flag() -> bool:
    return os.environ.get("FBSDEGAME_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


NUMBA_ENABLED = numba is not None and _flag()


# --- loop implementations (numba targets) -----------------------------------


def _locate_loop(s, n):
    flat = s.ravel()
    m = flat.size
    lo = np.empty(m, dtype=np.int64)
    frac = np.empty(m)
    clamped = np.zeros(m, dtype=np.bool_)
    top = n - 1
    for i in range(m):
        v = flat[i]
        r = math.floor(v + 0.5)
        if abs(v - r) < SNAP:
            v = r
        if v <= 0.0:
            lo[i] = 0
            frac[i] = 0.0
            clamped[i] = v < 0.0
        elif v >= top:
            lo[i] = top - 1
            frac[i] = 1.0
            clamped[i] = v > top
        else:
            k = int(math.floor(v))
            lo[i] = k
            frac[i] = v - k
    return lo.reshape(s.shape), frac.reshape(s.shape), clamped.reshape(s.shape)


def _gather_loop(y, lo, frac):
    flo = lo.ravel()
    ffr = frac.ravel()
    out = np.empty(flo.size)
    for i in range(flo.size):
        k = flo[i]
        out[i] = (1.0 - ffr[i]) * y[k] + ffr[i] * y[k + 1]
    return out.reshape(lo.shape)


def _build_stencil_loop(x_min, dx, n, dt, drift, vol, shifts, lam):
    a = lam.size
    idx = np.zeros((n, 3), dtype=np.int64)
    w = np.zeros((n, 3))
    jlo = np.zeros((n, a), dtype=np.int64)
    jfrac = np.zeros((n, a))
    leak = np.zeros(n)
    inflated = np.zeros(n, dtype=np.bool_)
    margin = np.ones(n)
    lam_total = 0.0
    for i in range(a):
        lam_total += lam[i] * dt
    q = 1.0 - lam_total
    top = n - 1
    for j in range(n):
        xj = x_min + j * dx
        j1 = 0.0
        jv = 0.0
        for i in range(a):
            h = shifts[j, i]
            s = (xj + h - x_min) / dx
            r = math.floor(s + 0.5)
            if abs(s - r) < SNAP:
                s = r
            fr = s - math.floor(s)
            jv += lam[i] * dt * fr * (1.0 - fr) * dx * dx
            j1 += lam[i] * dt * h
            if s <= 0.0:
                jlo[j, i] = 0
                jfrac[j, i] = 0.0
                if s < 0.0:
                    leak[j] += lam[i] * dt
            elif s >= top:
                jlo[j, i] = top - 1
                jfrac[j, i] = 1.0
                if s > top:
                    leak[j] += lam[i] * dt
            else:
                k = int(math.floor(s))
                jlo[j, i] = k
                jfrac[j, i] = s - k
        if q <= 0.0:
            margin[j] = q
            idx[j, 0] = j
            idx[j, 1] = j
            idx[j, 2] = j
            continue
        m1 = drift[j] * dt
        d1 = m1 - j1
        d2 = vol[j] * vol[j] * dt + m1 * m1 - jv
        mu = d1 / q
        var = d2 / q - mu * mu
        s = (xj + mu - x_min) / dx
        r = math.floor(s + 0.5)
        if abs(s - r) < SNAP:
            s = r
        base = int(math.floor(s + 0.5))
        if base - 1 < 0 or base + 1 > top:
            # boundary: two-point split of the mean, spread dropped
            if s <= 0.0:
                lo = 0
                fr = 0.0
                if s < 0.0:
                    leak[j] += q
            elif s >= top:
                lo = top - 1
                fr = 1.0
                if s > top:
                    leak[j] += q
            else:
                lo = int(math.floor(s))
                fr = s - lo
            idx[j, 0] = lo
            idx[j, 1] = lo
            idx[j, 2] = lo + 1
            w[j, 0] = 0.0
            w[j, 1] = q * (1.0 - fr)
            w[j, 2] = q * fr
            inflated[j] = True
            continue
        c = (s - base) * -dx
        ac = abs(c)
        minvar = ac * (dx - ac)
        if var < minvar:
            var = minvar
            inflated[j] = var > 0.0 or d2 / q - mu * mu < -1e-300
        ppm = (var + c * c) / (dx * dx)
        pdiff = -c / dx
        pp = 0.5 * (ppm + pdiff)
        pm = 0.5 * (ppm - pdiff)
        if pp < 0.0:
            pp = 0.0
        if pm < 0.0:
            pm = 0.0
        p0 = 1.0 - pp - pm
        margin[j] = p0
        idx[j, 0] = base - 1
        idx[j, 1] = base
        idx[j, 2] = base + 1
        w[j, 0] = q * pm
        w[j, 1] = q * p0
        w[j, 2] = q * pp
    return idx, w, jlo, jfrac, leak, inflated, margin


def _apply_stencil_loop(y, idx, w, jlo, jfrac, jw):
    n = idx.shape[0]
    a = jw.size
    out = np.empty(n)
    for j in range(n):
        acc = w[j, 0] * y[idx[j, 0]] + w[j, 1] * y[idx[j, 1]] + w[j, 2] * y[idx[j, 2]]
        for i in range(a):
            k = jlo[j, i]
            f = jfrac[j, i]
            acc += jw[i] * ((1.0 - f) * y[k] + f * y[k + 1])
        out[j] = acc
    return out


def _regression_slope_loop(y, x_min, dx, idx, w):
    n = idx.shape[0]
    out = np.empty(n)
    for j in range(n):
        mass = w[j, 0] + w[j, 1] + w[j, 2]
        mean = 0.0
        ymean = 0.0
        if mass > 0.0:
            for m in range(3):
                mean += w[j, m] * (x_min + idx[j, m] * dx)
                ymean += w[j, m] * y[idx[j, m]]
            mean /= mass
            ymean /= mass
        cov = 0.0
        var = 0.0
        for m in range(3):
            d = x_min + idx[j, m] * dx - mean
            cov += w[j, m] * (y[idx[j, m]] - ymean) * d
            var += w[j, m] * d * d
        if mass > 0.0 and var > 1e-14 * dx * dx * mass:
            out[j] = cov / var
        elif j == 0:
            out[j] = (y[1] - y[0]) / dx
        elif j == n - 1:
            out[j] = (y[n - 1] - y[n - 2]) / dx
        else:
            out[j] = (y[j + 1] - y[j - 1]) / (2.0 * dx)
    return out


def _hjbi_operator_loop(wv, dx, half_sig2, beff):
    n = wv.size
    op = np.empty(n)
    pup = np.empty(n)
    for j in range(n):
        if j == 0 or j == n - 1:
            a2 = 0.0
        else:
            a2 = (wv[j + 1] - 2.0 * wv[j] + wv[j - 1]) / (dx * dx)
        b = beff[j]
        if b > 0.0:
            p = (wv[j + 1] - wv[j]) / dx if j < n - 1 else 0.0
        elif b < 0.0:
            p = (wv[j] - wv[j - 1]) / dx if j > 0 else 0.0
        else:
            p = 0.0
        pup[j] = p
        op[j] = half_sig2[j] * a2 + b * p
    return op, pup


# --- numpy implementations ---------------------------------------------------


def _snap(s):
    r = np.floor(s + 0.5)
    return np.where(np.abs(s - r) < SNAP, r, s)


def _locate_np(s, n):
    s = _snap(np.asarray(s, dtype=float))
    top = n - 1
    lo = np.floor(s).astype(np.int64)
    frac = s - lo
    low = s <= 0.0
    high = s >= top
    lo = np.where(low, 0, np.where(high, top - 1, lo))
    frac = np.where(low, 0.0, np.where(high, 1.0, frac))
    clamped = (s < 0.0) | (s > top)
    return lo, frac, clamped


def _gather_np(y, lo, frac):
    return (1.0 - frac) * y[lo] + frac * y[lo + 1]


def _build_stencil_np(x_min, dx, n, dt, drift, vol, shifts, lam):
    a = lam.size
    x = x_min + np.arange(n) * dx
    lamdt = lam * dt
    q = 1.0
    lam_total = 0.0
    for i in range(a):
        lam_total += lamdt[i]
    q -= lam_total
    top = n - 1
    leak = np.zeros(n)
    if a:
        s = _snap((x[:, None] + shifts - x_min) / dx)
        fr = s - np.floor(s)
        jlo, jfrac, jcl = _locate_np(s, n)
        # accumulate atom by atom in the loop's order so both paths agree bitwise
        jv = np.zeros(n)
        j1 = np.zeros(n)
        for i in range(a):
            jv += lamdt[i] * fr[:, i] * (1.0 - fr[:, i]) * dx * dx
            j1 += lamdt[i] * shifts[:, i]
            leak += np.where(jcl[:, i], lamdt[i], 0.0)
    else:
        jv = np.zeros(n)
        j1 = np.zeros(n)
        jlo = np.zeros((n, 0), dtype=np.int64)
        jfrac = np.zeros((n, 0))
    idx = np.zeros((n, 3), dtype=np.int64)
    w = np.zeros((n, 3))
    inflated = np.zeros(n, dtype=bool)
    margin = np.ones(n)
    if q <= 0.0:
        margin[:] = q
        idx[:] = np.arange(n)[:, None]
        return idx, w, jlo, jfrac, leak, inflated, margin
    m1 = drift * dt
    d1 = m1 - j1
    d2 = vol * vol * dt + m1 * m1 - jv
    mu = d1 / q
    var = d2 / q - mu * mu
    s = _snap((x + mu - x_min) / dx)
    base = np.floor(s + 0.5).astype(np.int64)
    edge = (base - 1 < 0) | (base + 1 > top)

    c = (s - base) * -dx
    ac = np.abs(c)
    minvar = ac * (dx - ac)
    low = var < minvar
    inflated = low & ((minvar > 0.0) | (var < -1e-300))
    var = np.where(low, minvar, var)
    ppm = (var + c * c) / (dx * dx)
    pdiff = -c / dx
    pp = np.maximum(0.5 * (ppm + pdiff), 0.0)
    pm = np.maximum(0.5 * (ppm - pdiff), 0.0)
    p0 = 1.0 - pp - pm
    idx[:, 0] = base - 1
    idx[:, 1] = base
    idx[:, 2] = base + 1
    w[:, 0] = q * pm
    w[:, 1] = q * p0
    w[:, 2] = q * pp
    margin = p0.copy()

    if edge.any():
        lo, fr, cl = _locate_np(s[edge], n)
        idx[edge, 0] = lo
        idx[edge, 1] = lo
        idx[edge, 2] = lo + 1
        w[edge, 0] = 0.0
        w[edge, 1] = q * (1.0 - fr)
        w[edge, 2] = q * fr
        leak[edge] += q * cl
        inflated[edge] = True
        margin[edge] = 1.0
    return idx, w, jlo, jfrac, leak, inflated, margin


def _apply_stencil_np(y, idx, w, jlo, jfrac, jw):
    out = w[:, 0] * y[idx[:, 0]] + w[:, 1] * y[idx[:, 1]] + w[:, 2] * y[idx[:, 2]]
    # atom by atom, matching the loop's summation order bit for bit
    for i in range(jw.size):
        k, f = jlo[:, i], jfrac[:, i]
        out = out + jw[i] * ((1.0 - f) * y[k] + f * y[k + 1])
    return out


def _regression_slope_np(y, x_min, dx, idx, w):
    n = idx.shape[0]
    pos = x_min + idx * dx
    mass = w.sum(axis=1)
    safe = np.where(mass > 0.0, mass, 1.0)
    mean = (w * pos).sum(axis=1) / safe
    yv = y[idx]
    ymean = (w * yv).sum(axis=1) / safe
    d = pos - mean[:, None]
    cov = (w * (yv - ymean[:, None]) * d).sum(axis=1)
    var = (w * d * d).sum(axis=1)
    ok = (mass > 0.0) & (var > 1e-14 * dx * dx * mass)
    fallback = np.gradient(y, dx) if n > 1 else np.zeros(n)
    return np.where(ok, cov / np.where(ok, var, 1.0), fallback)


def _hjbi_operator_np(wv, dx, half_sig2, beff):
    n = wv.size
    a2 = np.zeros(n)
    a2[1:-1] = (wv[2:] - 2.0 * wv[1:-1] + wv[:-2]) / (dx * dx)
    fwd = np.zeros(n)
    bwd = np.zeros(n)
    fwd[:-1] = (wv[1:] - wv[:-1]) / dx
    bwd[1:] = (wv[1:] - wv[:-1]) / dx
    pup = np.where(beff > 0.0, fwd, np.where(beff < 0.0, bwd, 0.0))
    return half_sig2 * a2 + beff * pup, pup


NUMPY = {
    "locate": _locate_np,
    "gather": _gather_np,
    "build_stencil": _build_stencil_np,
    "apply_stencil": _apply_stencil_np,
    "regression_slope": _regression_slope_np,
    "hjbi_operator": _hjbi_operator_np,
}

_LOOPS = {
    "locate": _locate_loop,
    "gather": _gather_loop,
    "build_stencil": _build_stencil_loop,
    "apply_stencil": _apply_stencil_loop,
    "regression_slope": _regression_slope_loop,
    "hjbi_operator": _hjbi_operator_loop,
}

if numba is not None:
    JIT = {name: numba.njit(cache=True)(fn) for name, fn in _LOOPS.items()}
else:  # pragma: no cover
    JIT = dict(NUMPY)

_ACTIVE = JIT if NUMBA_ENABLED else NUMPY


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def locate(s, n):
    """Bracketing node ``lo`` and weight ``frac`` for fractional grid positions ``s``.

    Positions outside ``[0, n-1]`` are clamped to the boundary node and flagged.
    """
    return _ACTIVE["locate"](np.ascontiguousarray(s, dtype=float), int(n))


def gather(y, lo, frac):
    return _ACTIVE["gather"](np.ascontiguousarray(y, dtype=float), lo, frac)


def build_stencil(x_min, dx, n, dt, drift, vol, shifts, lam):
    return _ACTIVE["build_stencil"](
        float(x_min), float(dx), int(n), float(dt),
        np.ascontiguousarray(drift, dtype=float), np.ascontiguousarray(vol, dtype=float),
        np.ascontiguousarray(shifts, dtype=float), np.ascontiguousarray(lam, dtype=float),
    )


def apply_stencil(y, idx, w, jlo, jfrac, jw):
    return _ACTIVE["apply_stencil"](np.ascontiguousarray(y, dtype=float), idx, w, jlo, jfrac, jw)


def regression_slope(y, x_min, dx, idx, w):
    return _ACTIVE["regression_slope"](np.ascontiguousarray(y, dtype=float), float(x_min), float(dx), idx, w)


def hjbi_operator(wv, dx, half_sig2, beff):
    return _ACTIVE["hjbi_operator"](
        np.ascontiguousarray(wv, dtype=float), float(dx),
        np.ascontiguousarray(half_sig2, dtype=float), np.ascontiguousarray(beff, dtype=float),
    )
