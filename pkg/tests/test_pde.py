import numpy as np
import pytest

from fbsdegame.config import parse_config
from fbsdegame.game import ValueField, problem_from_config
from fbsdegame.pde import (PDEError, evaluate_nonlocal, solve_hjbi_general, solve_hjbi_special,
                           viscosity_residual)
from fbsdegame.stochastics import CFLError

from conftest import load_problem


def _exact(pb, fn):
    x, t = pb.space.x, pb.time.times
    W = fn(t[:, None], x[None, :])
    N, n = pb.time.n_steps, pb.space.n_nodes
    z = np.zeros((N, n), dtype=np.int64)
    return ValueField(W, "lower", z, z, t, pb.space)


def test_nonlocal_terms():
    pb = load_problem("jump")
    x = pb.space.x
    for j in (50, 100, 150):
        B, C = evaluate_nonlocal(x ** 2, j, pb.cs, pb.levy, 0.0, 0.0, 2 * x[j], space=pb.space)
        assert B == pytest.approx(1.0, abs=1e-12)
        assert C == pytest.approx(1.0, abs=1e-12)
        B, C = evaluate_nonlocal(3 * x - 1, j, pb.cs, pb.levy, 0.0, 0.0, 3.0, space=pb.space)
        assert abs(B) < 1e-12 and abs(C) < 1e-12
    with pytest.raises(ValueError):
        evaluate_nonlocal(x, 5, pb.cs, pb.levy, 0, 0, 1.0)


def test_residual_zero_on_exact_jump_solution():
    pb = load_problem("jump")
    res = viscosity_residual(_exact(pb, lambda t, x: x ** 2 + (pb.time.T - t)), pb)
    assert np.max(np.abs(res)) <= 1e-8


def test_heat_residual_first_order_in_time():
    r = []
    for nt in (112, 224):
        pb = load_problem("heat", nt)
        r.append(np.max(np.abs(viscosity_residual(solve_hjbi_special(pb), pb))))
    assert r[1] / r[0] == pytest.approx(0.5, abs=0.1)


def test_general_equals_special_for_z_free_sigma():
    pb = load_problem("crossval_jump", 20)
    a, b = solve_hjbi_special(pb, "upper"), solve_hjbi_general(pb, "upper")
    assert np.array_equal(a.values, b.values) and np.array_equal(a.Z, b.Z)


def _rep_problem(sigma):
    cfg = parse_config(f'[model]\nsigma = "{sigma}"\nphi = "x"\n[grid]\nn_steps = 20\nn_nodes = 41\n')
    return problem_from_config(cfg, check=False)


def test_general_solver_uses_representation():
    pb = _rep_problem("0.2*(1-z)")
    f = solve_hjbi_general(pb)
    assert np.allclose(f.values, pb.space.x[None, :], atol=1e-13)
    assert np.allclose(f.Z[:-1], 0.2 / 1.2, atol=1e-12)
    with pytest.raises(PDEError, match="special"):
        solve_hjbi_special(pb)


def test_strong_z_dependence_rejected():
    with pytest.raises(PDEError, match="smallness"):
        solve_hjbi_general(_rep_problem("z"))


def test_cfl_precondition():
    with pytest.raises(CFLError) as info:
        solve_hjbi_special(load_problem("heat", 40))
    assert info.value.suggested_dt < 1.0 / 40


def test_scheme_monotone_and_ordered():
    pb = load_problem("crossval_jump")
    lo, up = solve_hjbi_special(pb, "lower"), solve_hjbi_special(pb, "upper")
    assert lo.meta["min_coefficient"] >= 0.0
    assert np.all(up.values - lo.values >= -1e-10)
    shifted = solve_hjbi_special(pb, "lower", terminal=np.tanh(pb.space.x) + 0.1 * np.cos(pb.space.x) ** 2)
    assert np.all(shifted.values - lo.values >= -1e-10)
