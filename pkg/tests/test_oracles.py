"""Closed-form oracle checks across modules, values frozen from analytic solutions."""

import math

import numpy as np
import pytest

from fbsdegame import verify
from fbsdegame.algebraic import AlgebraicQuery, representation_bounds, solve_representation
from fbsdegame.bsde import compare_bsde, solve_bsde, stability_gap
from fbsdegame.coeffs import MonotonicityCert, check_h22, check_h23, check_h31, parse_coefficients
from fbsdegame.fbsde import SemigroupQuery, cost_functional, solve_fbsde_small
from fbsdegame.game import isaacs_gap, lower_value, upper_value
from fbsdegame.grids import SpaceGrid, TimeGrid
from fbsdegame.stochastics import LevyModel, markov_stencil, sample_paths

from conftest import load_problem

NOLEVY = LevyModel()
SPACE = SpaceGrid(-5.0, 5.0, 101)


def _cs(**kw):
    kw.setdefault("phi", "x")
    return parse_coefficients("[model]\n" + "".join(f'{k} = "{v}"\n' for k, v in kw.items()))


# --- coefficient certificates ---------------------------------------------------------------------------


def test_lipschitz_of_linear_volatility():
    assert check_h22(_cs(sigma="0.5*x"), NOLEVY, 1000).lipschitz["sigma.x"] == pytest.approx(0.5, abs=1e-9)


def test_quadratic_terminal_growth_ratio():
    rep = check_h22(_cs(phi="x*x"), NOLEVY, 1000, box=5.0, growth_cap=10.0)
    assert rep.growth["phi"] <= 25.0 / 6.0 and rep.passed


def test_monotonicity_sign():
    cert = MonotonicityCert(1.0, 1.0, 0.0, 0.0, 1.0)
    ok = check_h23(_cs(f="x"), NOLEVY, cert, 1000)
    assert ok.verified and ok.worst_violation <= 1e-12
    bad = check_h23(_cs(f="-x"), NOLEVY, cert, 1000)
    assert not bad.verified and bad.worst_violation > 0


@pytest.mark.parametrize("sigma, L, holds", [("0.1*z", 0.1, True), ("z", 1.0, False)])
def test_smallness_constants(sigma, L, holds):
    s = check_h31(_cs(sigma=sigma), NOLEVY, 1000)
    assert s.L_sigma == pytest.approx(L, abs=1e-9) and s.holds is holds


# --- noise and stencil ------------------------------------------------------------------------------


def test_poisson_mean_count():
    paths = sample_paths(TimeGrid(0.0, 1.0, 2), LevyModel((1.0,), (2.0,)), 100_000, 0)
    assert paths.jump_counts.mean() == pytest.approx(1.0, abs=0.02)


def test_trinomial_weights():
    st_ = markov_stencil(0.005, SpaceGrid(-1.0, 1.0, 21), NOLEVY, 0.0, 1.0)
    assert np.allclose(st_.w[1:-1], [0.25, 0.5, 0.25], atol=1e-15)


# --- BSDE --------------------------------------------------------------------------------------------


TIME = TimeGrid(0.0, 1.0, 50)
STILL = markov_stencil(TIME, SPACE, NOLEVY, 0.0, 0.0)


def test_constant_driver():
    sol = solve_bsde(TIME, SPACE, NOLEVY, STILL, 1.0, 0.0)
    assert np.max(np.abs(sol.Y - (1.0 - TIME.times)[:, None])) <= 1e-10


def test_linear_decay_driver():
    sol = solve_bsde(TIME, SPACE, NOLEVY, STILL, "-y", 1.0)
    assert np.max(np.abs(sol.Y[0] - math.exp(-1.0))) <= 2 * TIME.dt


def test_comparison_margin_is_the_constant_gap():
    st_ = markov_stencil(TIME, SPACE, NOLEVY, 0.0, 0.5)
    v = compare_bsde(solve_bsde(TIME, SPACE, NOLEVY, st_, 0.0, "x^2 + 1"),
                     solve_bsde(TIME, SPACE, NOLEVY, st_, 0.0, "x^2"))
    assert v.holds and v.worst_margin == pytest.approx(1.0, abs=1e-12)


def test_stability_terminal_gap():
    st_ = markov_stencil(TIME, SPACE, NOLEVY, 0.0, 0.5)
    eps, C = 0.3, 0.0
    a = solve_bsde(TIME, SPACE, NOLEVY, st_, 0.0, f"x + {eps}")
    b = solve_bsde(TIME, SPACE, NOLEVY, st_, 0.0, "x")
    rep = stability_gap(a, b, st_, NOLEVY, (f"x + {eps}", "x"), (0.0, 0.0), C)
    beta = 2.0
    assert rep.satisfied
    assert np.allclose(rep.rhs[:, 50], np.exp(beta * (1.0 - TIME.times)) * eps ** 2, rtol=1e-12)


def test_stability_driver_gap():
    st_ = markov_stencil(TIME, SPACE, NOLEVY, 0.0, 0.5)
    eps = 0.2
    a = solve_bsde(TIME, SPACE, NOLEVY, st_, eps, "x")
    b = solve_bsde(TIME, SPACE, NOLEVY, st_, 0.0, "x")
    rep = stability_gap(a, b, st_, NOLEVY, ("x", "x"), (eps, 0.0), 0.0)
    exact = eps ** 2 * (math.exp(2.0) - 1.0) / 2.0
    assert rep.satisfied and rep.worst_ratio <= 1.0
    assert rep.rhs[0, 50] == pytest.approx(exact, rel=2 * TIME.dt * 2.0)


# --- representation equation ------------------------------------------------------------------------


@pytest.mark.parametrize("sigma, p, xi, z", [("-z", 2.0, 3.0, 1.0), ("-z + 0.5", 1.0, 0.0, 0.25)])
def test_representation_closed_forms(sigma, p, xi, z):
    assert solve_representation(AlgebraicQuery(0, 0, 0, xi, p), _cs(sigma=sigma)) == pytest.approx(z, abs=1e-12)


def test_representation_lipschitz_in_xi():
    rep = representation_bounds(_cs(sigma="-z"), 1000, 0)
    assert rep.lip_xi <= 1.0 + 1e-12 and rep.lip_xi <= rep.lip_xi_bound + 1e-12


def test_representation_monotone_nonlinear():
    rep = representation_bounds(_cs(sigma="tanh(z)*(-1)"), 1000, 0, p_range=(0.5, 0.5))
    assert rep.max_residual <= 1e-12 and rep.growth_holds


# --- FBSDE and cost ----------------------------------------------------------------------------------


def test_decoupled_window_equals_direct_bsde():
    cs = _cs(b="0.3", sigma="0.5", f="0.2*y + 0.1*z", phi="tanh(x)")
    time = TimeGrid(0.0, 0.2, 10)
    res = solve_fbsde_small(SemigroupQuery(0, 10), cs, NOLEVY, time, SPACE)
    direct = solve_bsde(time, SPACE, NOLEVY, markov_stencil(time, SPACE, NOLEVY, 0.3, 0.5),
                        "0.2*y + 0.1*z", "tanh(x)")
    assert np.max(np.abs(res.solution.Y - direct.Y)) <= 1e-12


def test_cost_of_opposing_pushes():
    cs = _cs(b="u+v")
    time = TimeGrid(0.0, 1.0, 20)
    j = [cost_functional(0, i, 1.0, -1.0, cs, NOLEVY, time, SPACE) for i in range(10, 91, 10)]
    assert np.allclose(j, SPACE.x[10:91:10], atol=1e-12)


def test_cost_of_unit_running_reward():
    cs = _cs(f="1", phi="0")
    time = TimeGrid(0.0, 1.0, 20)
    assert cost_functional(5, 50, 0.0, 0.0, cs, NOLEVY, time, SPACE) == pytest.approx(0.75, abs=1e-10)


def test_cost_of_heat_payoff():
    cs = _cs(sigma="1", phi="x^2")
    time, space = TimeGrid(0.0, 1.0, 120), SpaceGrid(-10.0, 10.0, 201)
    for i in (80, 100, 120):
        x = space.x[i]
        assert cost_functional(0, i, 0, 0, cs, NOLEVY, time, space) == pytest.approx(x * x + 1.0, rel=0.02)


# --- game values -----------------------------------------------------------------------------------------


def test_product_drift_values_at_all_times():
    pb = load_problem("game_uv")
    mask, x = pb.space.interior(), pb.space.x[pb.space.interior()]
    tau = (pb.time.T - pb.time.times)[:, None]
    lo, up = lower_value(pb).values[:, mask], upper_value(pb).values[:, mask]
    scale = np.maximum(1.0, np.abs(x))
    assert np.max(np.abs(lo - (x - tau)) / scale) <= 0.02
    assert np.max(np.abs(up - (x + tau)) / scale) <= 0.02
    assert isaacs_gap(lower_value(pb), upper_value(pb)).max_gap == pytest.approx(2 * pb.time.T, abs=1e-8)


def test_additive_drift_value():
    pb = load_problem("game_uplusv")
    mask = pb.space.interior()
    lo, up = lower_value(pb), upper_value(pb)
    assert np.max(np.abs(lo.values[:, mask] - pb.space.x[mask])) <= 2 * pb.time.dt
    assert np.max(np.abs(up.values - lo.values)) <= 2 * pb.time.dt


def test_heat_monte_carlo_matches_second_moment():
    pb = load_problem("heat")
    rep = verify.expected_value_reduction(pb, n_paths=(20000,), seeds=(0,))
    assert abs(rep.means[0] - (0.0 + 1.0)) <= 3 * rep.ses[0]
