import numpy as np
import pytest

from fbsdegame.fbsde import (PicardError, SemigroupQuery, SolverOptions, backward_semigroup, chain_solve,
                             cost_functional, forward_coefficients, solve_fbsde_small)

from conftest import load_problem


@pytest.fixture(scope="module")
def coupled():
    return load_problem("coupled")


def _args(pb):
    return pb.cs, pb.levy, pb.time, pb.space


def test_forward_coefficients_shapes(coupled):
    x = coupled.space.x
    b, s, h = forward_coefficients(coupled.cs, coupled.levy, 0.0, x, x, 0 * x, 1.0, -1.0)
    assert b.shape == s.shape == x.shape and h.shape == (x.size, 2)
    assert np.allclose(b, -0.5 * x - 0.3) and np.allclose(h, [-0.2, 0.2])


def test_picard_contracts(coupled):
    res = solve_fbsde_small(SemigroupQuery(40, 10, 1.0, -1.0), *_args(coupled), coupled.opts)
    tr = np.asarray(res.trace)
    assert tr[-1] <= coupled.opts.picard_tol
    assert np.all(tr[2:] / tr[1:-1] < 1.0)


def test_picard_stall_reports_trace(coupled):
    with pytest.raises(PicardError) as info:
        solve_fbsde_small(SemigroupQuery(40, 10), *_args(coupled), SolverOptions(picard_max=2))
    assert len(info.value.trace) == 2


def test_window_cap(coupled):
    with pytest.raises(ValueError, match="delta0"):
        solve_fbsde_small(SemigroupQuery(0, 11), *_args(coupled), coupled.opts)


def test_semigroup_composition(coupled):
    phi = coupled.cs.phi.vector(x=coupled.space.x)
    one = backward_semigroup(SemigroupQuery(44, 6, 1.0, 1.0, phi), *_args(coupled),
                             coupled.opts)
    late = backward_semigroup(SemigroupQuery(47, 3, 1.0, 1.0, phi), *_args(coupled), coupled.opts)
    two = backward_semigroup(SemigroupQuery(44, 3, 1.0, 1.0, late), *_args(coupled), coupled.opts)
    assert np.max(np.abs(one - two)) < 1e-8
    assert np.array_equal(backward_semigroup(SemigroupQuery(5, 0, 0, 0, phi), *_args(coupled)), phi)


def test_decoupled_is_single_pass():
    pb = load_problem("crossval_jump")
    res = solve_fbsde_small(SemigroupQuery(0, 5, 1.0, -1.0), *_args(pb), pb.opts)
    assert res.iterations == 1


def test_chain_independent_of_window_size(coupled):
    res = chain_solve(*_args(coupled), 1.0, 1.0, coupled.opts)
    assert res.windows[0] == (40, 50) and res.windows[-1] == (0, 10)
    direct = chain_solve(*_args(coupled), 1.0, 1.0, SolverOptions(delta0_steps=5))
    assert np.max(np.abs(res.solution.Y[0] - direct.solution.Y[0])) < 1e-8


def test_cost_functional_is_chain_value(coupled):
    j = cost_functional(10, 40, 1.0, -1.0, *_args(coupled), coupled.opts)
    res = chain_solve(*_args(coupled), 1.0, -1.0, coupled.opts, start=10)
    assert j == res.solution.Y[0, 40]


def test_self_referential_drift_closed_form():
    # b = y, Psi = x: Y is constant along characteristics, so Y = x + delta*Y, i.e. Y = x / (1 - delta)
    from fbsdegame.coeffs import parse_coefficients
    from fbsdegame.grids import SpaceGrid, TimeGrid
    from fbsdegame.stochastics import LevyModel

    cs = parse_coefficients('[model]\nb = "y"\nphi = "x"\n')
    time, space = TimeGrid(0.0, 0.1, 10), SpaceGrid(-4.0, 4.0, 81)
    res = solve_fbsde_small(SemigroupQuery(0, 10), cs, LevyModel(), time, space)
    x = space.x
    core = np.abs(x) <= 3.0
    Y0 = res.solution.Y[0]
    assert np.max(np.abs(Y0[core] - x[core] / 0.9)) < 1e-10
    # the exponential reading agrees within 3 dt on this range of x
    assert np.max(np.abs(Y0[core] - x[core] * np.exp(0.1))) <= 3 * time.dt
