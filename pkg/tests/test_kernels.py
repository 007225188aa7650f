import os
import subprocess
import sys

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from fbsdegame import _kernels


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return len(a) == len(b) and all(np.array_equal(np.asarray(p), np.asarray(q)) for p, q in zip(a, b))


def _both(name, *args):
    return _kernels.JIT[name](*args), _kernels.NUMPY[name](*args)


@given(st.integers(0, 2**32 - 1), st.integers(5, 60), st.integers(0, 3))
def test_kernels_bit_identical(seed, n, atoms):
    rng = np.random.default_rng(seed)
    dx = 0.1
    x_min = -0.05 * (n - 1)
    dt = float(rng.uniform(0.05, 0.4)) * dx * dx
    drift = rng.uniform(-2, 2, n)
    vol = rng.uniform(0.0, 1.0, n)
    # a few shifts land exactly on nodes to exercise the snapping
    shifts = np.where(rng.random((n, atoms)) < 0.3, dx * rng.integers(-3, 4, (n, atoms)),
                      rng.uniform(-1.5, 1.5, (n, atoms)))
    lam = rng.uniform(0.1, 2.0, atoms)
    y = rng.normal(size=n)
    st_ = _both("build_stencil", x_min, dx, n, dt, drift, vol, shifts, lam)
    assert _same(*st_)
    idx, w, jlo, jfrac = st_[0][:4]
    assert _same(*_both("apply_stencil", y, idx, w, jlo, jfrac, lam * dt))
    assert _same(*_both("regression_slope", y, x_min, dx, idx, w))
    assert _same(*_both("hjbi_operator", y, dx, 0.5 * vol ** 2, drift))
    s = rng.uniform(-3, n + 2, (n, 3))
    loc = _both("locate", s, n)
    assert _same(*loc)
    assert _same(*_both("gather", y, loc[0][0], loc[0][1]))


def test_backend_flag_selects_numpy():
    code = "from fbsdegame import backend; print(backend())"
    for flag, expected in (("0", "numpy"), ("off", "numpy"), ("1", "numba")):
        env = dict(os.environ, FBSDEGAME_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == expected


def test_backends_agree_on_a_full_solve():
    code = ("import hashlib\nfrom fbsdegame import game\nfrom fbsdegame.config import read_config\n"
            "pb = game.problem_from_config(read_config(r'%s'), nt=20)\n"
            "print(hashlib.sha256(game.lower_value(pb).values.tobytes()).hexdigest())")
    from conftest import config_path
    digests = set()
    for flag in ("1", "0"):
        env = dict(os.environ, FBSDEGAME_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code % config_path("crossval_jump")], env=env,
                             capture_output=True, text=True, check=True)
        digests.add(out.stdout.strip())
    assert len(digests) == 1
