"""Value functions of zero-sum stochastic differential games driven by coupled FBSDEs with jumps.

Numerical kernels run through numba when available; set ``FBSDEGAME_NUMBA=0``
to force the pure-numpy implementations.
"""

__version__ = "0.1.0"

from ._kernels import backend  # noqa: E402

__all__ = ["__version__", "backend"]
