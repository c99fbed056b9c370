"""Chebyshev-Gauss-Lobatto collocation on an interval ``[0, length]``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError


@dataclass(frozen=True, eq=False)
class ChebGrid:
    """Points ``length * (1 - cos(i pi / n)) / 2`` and their differentiation matrix."""

    n: int
    points: np.ndarray
    diff: np.ndarray
    length: float = 1.0

    @property
    def size(self) -> int:
        return self.n + 1


def cheb_grid(n: int, length: float = 1.0) -> ChebGrid:
    if n < 2:
        raise DimensionError(f"Chebyshev grid needs n >= 2, got {n}")
    i = np.arange(n + 1)
    t = np.cos(np.pi * i / n)  # descending on [-1, 1]
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** i
    dt = t[:, None] - t[None, :]
    d = np.outer(c, 1.0 / c) / (dt + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    # x = length (1 - t) / 2  =>  d/dx = -(2 / length) d/dt
    x = 0.5 * length * (1.0 - t)
    x[0], x[-1] = 0.0, length
    dx = -(2.0 / length) * d
    x.setflags(write=False)
    dx.setflags(write=False)
    return ChebGrid(n=n, points=x, diff=dx, length=float(length))


def cheb_interp_matrix(grid: ChebGrid, targets) -> np.ndarray:
    """Barycentric interpolation matrix from grid values to ``targets``."""
    x = grid.points
    targets = np.asarray(targets, dtype=float)
    w = (-1.0) ** np.arange(grid.size)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = targets[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-14 * max(grid.length, 1.0))
    diff[exact] = 1.0
    m = w[None, :] / diff
    m /= m.sum(axis=1, keepdims=True)
    rows = np.flatnonzero(exact.any(axis=1))
    for r in rows:
        m[r] = exact[r].astype(float)
    return m
