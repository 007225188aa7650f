import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbsdegame.coeffs import (MonotonicityCert, check_h22, check_h23, check_h31, lipschitz_bound,
                              parse_coefficients)
from fbsdegame.grids import ControlGrid
from fbsdegame.stochastics import LevyModel

LEVY = LevyModel((-1.0, 1.0), (0.5, 0.5), (1.0, 1.0))


def _cs(**kw):
    text = "[model]\n" + "".join(f'{k} = "{v}"\n' for k, v in kw.items())
    return parse_coefficients(text)


@given(a=st.floats(-3, 3), c=st.floats(-3, 3), d=st.floats(-3, 3))
def test_linear_lipschitz_exact(a, c, d):
    cs = _cs(b=f"{a}*x + {c}*y", sigma=f"{d}*z", f=f"{c}*x - {a}*k", phi=f"{d}*x")
    rep = check_h22(cs, LEVY, 200, 1, lip_cap=100, growth_cap=100)
    for key, expected in (("b.x", a), ("b.y", c), ("sigma.z", d), ("f.x", c), ("f.k", a), ("phi.x", d)):
        assert rep.lipschitz[key] == pytest.approx(abs(expected), rel=1e-9, abs=1e-12)
    assert rep.lipschitz["b.z"] == 0.0


def test_h22_flags_caps_and_decreasing_k():
    assert not check_h22(_cs(phi="x", b="20*x"), LEVY, 200).passed
    rep = check_h22(_cs(phi="x", f="-k"), LEVY, 200)
    assert not rep.k_nondecreasing and not rep.passed
    assert check_h22(_cs(phi="x", f="0.5*k"), LEVY, 200).passed


def test_h22_needs_probes():
    with pytest.raises(ValueError):
        check_h22(_cs(phi="x"), LEVY, 10)


def test_monotonicity_constraints():
    with pytest.raises(ValueError):
        MonotonicityCert(1.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        MonotonicityCert(0.0, 1.0, 1.0, 1.0, 1.0)


def test_h23_verifies_dissipative_system_and_rejects_expansive():
    cert = MonotonicityCert(1.0, 1.0, 0.2, 0.0, 1.0)
    ok = _cs(b="-0.5*y", sigma="0.3-0.2*z", h="0.2*e", f="x", phi="x")
    assert check_h23(ok, LEVY, cert, 500).verified
    bad = _cs(b="2*y", sigma="0.3", f="x", phi="x")
    res = check_h23(bad, LEVY, cert, 500)
    assert not res.verified and res.worst_violation > 0


def test_h31_smallness():
    cs = _cs(sigma="0.3-0.2*z", h="0.1*z*e", phi="x")
    small = check_h31(cs, LEVY, 500)
    assert small.L_sigma == pytest.approx(0.2, rel=1e-9)
    assert small.C_tilde_h == pytest.approx(0.01, rel=1e-9)
    assert small.holds
    assert not check_h31(_cs(sigma="z", phi="x"), LEVY, 500).holds


def test_lipschitz_bound_formula():
    cs = _cs(b="0.5*y", phi="2*x", f="0.1*x")
    cs = check_h22(cs, LEVY, 300, controls=ControlGrid()).apply(cs)
    assert lipschitz_bound(cs, LEVY, 2.0) == pytest.approx((2.0 + 2 * 0.1) * math.exp(2 * 0.5), rel=1e-9)


def test_special_and_decoupled_flags():
    assert _cs(b="y", phi="x").special and not _cs(b="y", phi="x").decoupled
    assert not _cs(sigma="z", phi="x").special
    assert _cs(sigma="x", h="e", phi="x").decoupled


def test_probe_determinism():
    cs = _cs(b="tanh(x*y)", sigma="0.1*sin(z)", phi="x")
    a = check_h22(cs, LEVY, 300, seed=4).lipschitz
    b = check_h22(cs, LEVY, 300, seed=4).lipschitz
    assert a == b
    assert np.isfinite(list(a.values())).all()
