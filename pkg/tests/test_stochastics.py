import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbsdegame.grids import ControlGrid, SpaceGrid, TimeGrid
from fbsdegame.stochastics import CFLError, LevyModel, discretize_levy, markov_stencil, sample_paths

SPACE = SpaceGrid(-4.0, 4.0, 81)


def test_grids():
    t = TimeGrid(0.0, 1.0, 4)
    assert t.dt == 0.25 and t.times.tolist() == [0, 0.25, 0.5, 0.75, 1.0]
    assert t.refine().n_steps == 8
    assert SPACE.dx == pytest.approx(0.1)
    assert SPACE.interior().sum() == 81 - 2 * 8
    assert ControlGrid((-1, 1), (0,)).pairs == [(-1.0, 0.0), (1.0, 0.0)]
    for bad in (lambda: TimeGrid(1, 0, 3), lambda: SpaceGrid(0, 1, 2), lambda: ControlGrid((), (1,))):
        with pytest.raises(ValueError):
            bad()


def test_levy_validation():
    m = discretize_levy([(-1, 0.5), (1, 0.5)], "min(1,abs(e))")
    assert m.total_intensity == 1.0 and m.l.tolist() == [1.0, 1.0]
    with pytest.raises(ValueError):
        discretize_levy([(0, 1.0)], "0")
    with pytest.raises(ValueError):
        discretize_levy([(1, -1.0)], "0")
    with pytest.raises(ValueError):
        discretize_levy([(0.5, 1.0)], "1")
    with pytest.raises(ValueError):
        LevyModel((1.0, 1.0), (1.0, 1.0))


def _moments(st_, x):
    P = st_.dense()
    d = x[None, :] - x[:, None]
    return P.sum(axis=1), (P * d).sum(axis=1), (P * d * d).sum(axis=1)


@given(b=st.floats(-1, 1), s=st.floats(0.2, 1.0), a=st.floats(0.1, 0.9), lam=st.floats(0.1, 1.0))
def test_stencil_matches_moments(b, s, a, lam):
    levy = LevyModel((-a, a), (lam, lam))
    dt = 0.5 * SPACE.dx ** 2 / (s * s + 2 * lam * SPACE.dx ** 2)
    st_ = markov_stencil(dt, SPACE, levy, b, s)
    mass, m1, m2 = _moments(st_, SPACE.x)
    assert np.all(st_.w >= 0) and np.allclose(mass, 1.0, atol=1e-14)
    ok = (st_.leak == 0) & (np.abs(SPACE.x) < 3.0)
    assert np.max(np.abs(m1[ok] - b * dt)) < 1e-12
    ok &= ~st_.inflated
    expected = s * s * dt + (b * dt) ** 2 + 2 * lam * a * a * dt
    assert np.max(np.abs(m2[ok] - expected)) < 1e-12


def test_inflated_nodes_add_variance():
    st_ = markov_stencil(0.001, SPACE, LevyModel(), 0.5, 0.001)
    _, m1, m2 = _moments(st_, SPACE.x)
    inner = np.abs(SPACE.x) < 3
    assert st_.inflated[inner].all()
    assert np.allclose(m1[inner], 0.5 * 0.001, atol=1e-14)
    assert np.all(m2[inner] >= 0.001 ** 2 * 0.001 + (0.5 * 0.001) ** 2)


def test_cfl_violation_suggests_step():
    levy = LevyModel((1.0,), (1.0,))
    with pytest.raises(CFLError) as info:
        markov_stencil(0.1, SPACE, levy, 0.0, 1.0)
    dt = info.value.suggested_dt
    markov_stencil(dt, SPACE, levy, 0.0, 1.0)


def test_paths_deterministic_and_lawful():
    grid = TimeGrid(0, 1, 20)
    levy = LevyModel((-1.0, 1.0), (0.5, 2.0))
    a = sample_paths(grid, levy, 4000, 7)
    b = sample_paths(grid, levy, 4000, 7)
    c = sample_paths(grid, levy, 4000, 8)
    assert np.array_equal(a.brownian_increments, b.brownian_increments)
    assert np.array_equal(a.jump_counts, b.jump_counts)
    assert not np.array_equal(a.brownian_increments, c.brownian_increments)
    dB = a.brownian_increments
    assert dB.shape == (4000, 20) and a.jump_counts.shape == (4000, 20, 2)
    n = dB.size
    assert abs(dB.mean()) < 4 * np.sqrt(grid.dt / n)
    assert abs(dB.var() - grid.dt) < 4 * grid.dt * np.sqrt(2 / n)
    for i, lam in enumerate(levy.lam):
        cnt = a.jump_counts[:, :, i]
        assert abs(cnt.mean() - lam * grid.dt) < 4 * np.sqrt(lam * grid.dt / n)
    comp = a.compensated_jumps(levy.e, levy.lam)
    assert abs(comp.mean()) < 4 * np.sqrt(2.5 * grid.dt / n)
