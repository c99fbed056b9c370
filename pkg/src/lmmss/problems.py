"""Small zero-residue test problems whose solution sets are not isolated points.

Each factory returns an :class:`~lmmss.solver.NlsProblem` with an exact
``dist`` to the solution set, together with a scaling operator ``L`` that
satisfies the completeness condition near the solution set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scaling
from .errors import ConfigError, DimensionError
from .scaling import ScalingOperator
from .solver import NlsProblem

__all__ = ["TestCase", "product_problem", "plane_problem", "rank_deficient_problem",
           "make_problem", "PROBLEMS"]


@dataclass(frozen=True, eq=False)
class TestCase:
    problem: NlsProblem
    L: ScalingOperator
    x0: np.ndarray


def product_problem(x0=(0.5, 0.3)) -> TestCase:
    """``F(x) = (x1, x1 x2)``; solutions form the line ``x1 = 0``."""

    def F(x):
        return np.array([x[0], x[0] * x[1]])

    def J(x):
        return np.array([[1.0, 0.0], [x[1], x[0]]])

    prob = NlsProblem(F, J, n=2, m=2, dist=lambda x: abs(x[0]), name="product")
    return TestCase(prob, scaling.first_diff(2), np.asarray(x0, dtype=float))


def plane_problem(x0=(0.9, 0.6, 0.4)) -> TestCase:
    """``F(x) = (s, s^2, s x3)`` with ``s = x1 + x2 - 1``; solutions form a plane."""

    def F(x):
        s = x[0] + x[1] - 1.0
        return np.array([s, s * s, s * x[2]])

    def J(x):
        s = x[0] + x[1] - 1.0
        return np.array([[1.0, 1.0, 0.0],
                         [2 * s, 2 * s, 0.0],
                         [x[2], x[2], s]])

    prob = NlsProblem(F, J, n=3, m=3, dist=lambda x: abs(x[0] + x[1] - 1.0) / np.sqrt(2.0),
                      name="plane")
    return TestCase(prob, scaling.first_diff(3), np.asarray(x0, dtype=float))


def rank_deficient_problem(n: int = 6, m: int = 8, rank: int = 4, seed: int = 0,
                           offset: float = 0.3) -> TestCase:
    """``F_i(x) = r_i + r_i^3 / 3`` with ``r = A x - b`` and ``rank(A) < n``.

    ``dF/dr = 1 + r^2`` never vanishes, so the zero set is exactly the
    affine space ``{A x = b}`` and there are no spurious stationary points.
    ``L`` is the first difference operator; ``A`` is drawn so that it does
    not annihilate constants.
    """
    if not 0 < rank < n <= m:
        raise DimensionError("need 0 < rank < n <= m")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    x_star = rng.standard_normal(n)
    b = A @ x_star
    pinv = np.linalg.pinv(A)
    direction = rng.standard_normal(n)
    x0 = x_star + offset * direction / np.linalg.norm(direction)

    def F(x):
        r = A @ x - b
        return r + r**3 / 3.0

    def J(x):
        r = A @ x - b
        return (1.0 + r * r)[:, None] * A

    prob = NlsProblem(F, J, n=n, m=m, dist=lambda x: float(np.linalg.norm(pinv @ (A @ x - b))),
                      name="rank_deficient")
    return TestCase(prob, scaling.first_diff(n), x0)


PROBLEMS = {
    "product": product_problem,
    "plane": plane_problem,
    "rank_deficient": rank_deficient_problem,
}


def make_problem(name: str, **kwargs) -> TestCase:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for problem {name!r}: {exc}") from exc
