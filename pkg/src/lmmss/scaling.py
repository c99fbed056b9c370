"""Discrete derivative operators used as (singular) scaling matrices.

The 1D factors are the usual forward-difference stencils.  The 2D
assemblies stack one-directional differences of a tensor grid whose
unknowns are ordered with the x index running fastest, i.e. the value at
``(x_i, y_j)`` sits at position ``j * nx + i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError

__all__ = [
    "Assembly",
    "ScalingOperator",
    "identity",
    "raw",
    "first_diff",
    "second_diff",
    "third_diff",
    "diff_operator",
    "kron",
    "assemble_grad2d",
    "assemble_tilde2d",
    "block_orthotropic",
    "numerical_rank",
    "completeness_gamma",
]

RANK_RTOL = 1e-10

_STENCILS = {
    1: np.array([-1.0, 1.0]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-1.0, 3.0, -3.0, 1.0]),
}


class Assembly(str, Enum):
    IDENTITY = "identity"
    GRAD2D = "grad2d"
    TILDE2D = "tilde2d"
    BLOCK_ORTHOTROPIC = "block_orthotropic"
    RAW = "raw"


def numerical_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank from singular values relative to the largest one."""
    a = np.atleast_2d(a)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True, eq=False)
class ScalingOperator:
    """A matrix ``L`` together with what it discretizes.

    Attributes
    ----------
    entries : ndarray, shape (p, n)
        Dense operator, read-only.
    derivative_order : int
        0 for the identity, otherwise the order of the difference stencil.
    assembly : Assembly
        How the operator was built.
    """

    entries: np.ndarray
    derivative_order: int = 0
    assembly: Assembly = Assembly.RAW

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2:
            raise DimensionError(f"scaling operator must be 2D, got ndim={a.ndim}")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "assembly", Assembly(self.assembly))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def __matmul__(self, other):
        return self.entries @ other

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    def gram(self) -> np.ndarray:
        """``L^T L``."""
        return self.entries.T @ self.entries

    def rank(self) -> int:
        return numerical_rank(self.entries)

    def is_full_row_rank(self) -> bool:
        return self.rows <= self.cols and self.rank() == self.rows

    def compressed(self) -> "ScalingOperator":
        """Full-row-rank operator with the same Gram matrix.

        The stacked 2D assemblies have more rows than columns.  Replacing
        ``L`` by ``diag(s_r) V_r^T`` from its thin SVD keeps ``L^T L`` (and
        hence the LM step and ``||L d||``) unchanged while meeting the
        ``p <= n``, rank ``p`` requirement of the GSVD.
        """
        if self.is_full_row_rank():
            return self
        _, s, vt = np.linalg.svd(self.entries, full_matrices=False)
        r = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        return ScalingOperator(s[:r, None] * vt[:r], self.derivative_order, Assembly.RAW)

    def nullity(self) -> int:
        return self.cols - self.rank()


def identity(n: int) -> ScalingOperator:
    if n < 1:
        raise DimensionError(f"identity needs n >= 1, got {n}")
    return ScalingOperator(np.eye(n), 0, Assembly.IDENTITY)


def raw(matrix, derivative_order: int = 0) -> ScalingOperator:
    return ScalingOperator(np.asarray(matrix, dtype=float), derivative_order, Assembly.RAW)


def _banded(n: int, order: int) -> np.ndarray:
    stencil = _STENCILS[order]
    if n < order + 1:
        raise DimensionError(f"order-{order} difference needs n >= {order + 1}, got {n}")
    rows = n - order
    out = np.zeros((rows, n))
    for j, c in enumerate(stencil):
        out[np.arange(rows), np.arange(rows) + j] = c
    return out


def first_diff(n: int) -> ScalingOperator:
    """``L_1(n)``, the (n-1) x n forward difference with rows (-1, 1)."""
    return ScalingOperator(_banded(n, 1), 1, Assembly.RAW)


def second_diff(n: int) -> ScalingOperator:
    """``L_2(n)``, rows (1, -2, 1)."""
    return ScalingOperator(_banded(n, 2), 2, Assembly.RAW)


def third_diff(n: int) -> ScalingOperator:
    """``L_3(n)``, rows (-1, 3, -3, 1)."""
    return ScalingOperator(_banded(n, 3), 3, Assembly.RAW)


def diff_operator(order: int, n: int) -> ScalingOperator:
    if order == 0:
        return identity(n)
    if order not in _STENCILS:
        raise DimensionError(f"derivative order must be in 0..3, got {order}")
    return ScalingOperator(_banded(n, order), order, Assembly.RAW)


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def _check_order(order: int, allowed) -> None:
    if order not in allowed:
        raise DimensionError(f"order must be one of {tuple(allowed)}, got {order}")


def assemble_grad2d(order: int, n: int) -> ScalingOperator:
    """Two-direction difference operator on an (n+1) x n grid.

    Stacks ``I_n (x) L_i(n+1)`` (differences along x, n+1 points per row)
    over ``L_i(n) (x) I_{n+1}`` (differences along y, n rows).
    """
    _check_order(order, (1, 2, 3))
    if n < order + 1:
        raise DimensionError(f"grad2d of order {order} needs n >= {order + 1}, got {n}")
    along_x = kron(np.eye(n), _banded(n + 1, order))
    along_y = kron(_banded(n, order), np.eye(n + 1))
    return ScalingOperator(np.vstack([along_x, along_y]), order, Assembly.GRAD2D)


def assemble_tilde2d(order: int, n: int) -> ScalingOperator:
    """Two-direction difference operator on the square (n+1) x (n+1) grid."""
    _check_order(order, (1, 2))
    if n + 1 < order + 1:
        raise DimensionError(f"tilde2d of order {order} needs n >= {order}, got {n}")
    d = _banded(n + 1, order)
    eye = np.eye(n + 1)
    return ScalingOperator(np.vstack([kron(eye, d), kron(d, eye)]), order, Assembly.TILDE2D)


def block_orthotropic(inner: ScalingOperator) -> ScalingOperator:
    """``I_2 (x) inner``: the same smoothing on both conductivity blocks."""
    return ScalingOperator(kron(np.eye(2), inner.entries), inner.derivative_order,
                           Assembly.BLOCK_ORTHOTROPIC)


def completeness_gamma(jac, L) -> float:
    """Smallest eigenvalue of ``J^T J + L^T L``.

    This is the best constant in ``||J v||^2 + ||L v||^2 >= gamma ||v||^2``;
    it is zero (up to rounding) exactly when ``J`` and ``L`` share a null
    vector.
    """
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    lmat = np.asarray(L, dtype=float)
    if lmat.ndim == 1:
        lmat = lmat.reshape(1, -1) if lmat.size else lmat.reshape(0, jac.shape[1])
    if lmat.shape[1] != jac.shape[1]:
        raise DimensionError(
            f"column mismatch: J has {jac.shape[1]} columns, L has {lmat.shape[1]}")
    gram = jac.T @ jac + lmat.T @ lmat
    return max(float(np.linalg.eigvalsh(gram)[0]), 0.0)
