"""Pennes bioheat model on ``(0, 1) x (0, height)``.

    U_t - Laplace(U) + P(x, y) U = G
    U_x = 0 on x = 0, 1;   U_y = B (U - U_inf) on y = 0;   U = 0 on y = height

State and perfusion unknowns live on the Chebyshev nodes with the
Dirichlet row ``y = height`` removed: ``(n + 1) * n`` values, x fastest.
Boundary fluxes are imposed by replacing the boundary rows of the first
derivative matrix before it is applied a second time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import DimensionError, DomainError
from .cheb import ChebGrid, cheb_grid
from .system import ParamTerm, SemiDiscreteSystem, SensorLayout

__all__ = [
    "BioheatParams",
    "BioheatMesh",
    "bioheat_mesh",
    "assemble_bioheat",
    "ManufacturedBioheat",
    "manufactured_bioheat_data",
    "default_bioheat_sensors",
]


@dataclass(frozen=True)
class BioheatParams:
    biot: float = 0.015
    u_inf: float = 0.001
    height: float = 1.0
    source: Optional[Callable] = None     # G(x, y, t), vectorized
    initial: Optional[Callable] = None    # U0(x, y)
    top_value: float = 0.0

    def __post_init__(self):
        for name in ("biot", "u_inf", "height", "top_value"):
            if not np.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.height <= 0:
            raise DomainError("height must be positive")


@dataclass(frozen=True, eq=False)
class BioheatMesh:
    n: int
    gx: ChebGrid
    gy: ChebGrid
    x: np.ndarray  # node coordinates, length (n+1)*n
    y: np.ndarray

    @property
    def nx(self) -> int:
        return self.n + 1

    @property
    def ny(self) -> int:
        return self.n

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def index(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def interior_mask(self) -> np.ndarray:
        i = np.tile(np.arange(self.nx), self.ny)
        j = np.repeat(np.arange(self.ny), self.nx)
        return (i > 0) & (i < self.n) & (j > 0)


def bioheat_mesh(n: int, height: float = 1.0) -> BioheatMesh:
    gx = cheb_grid(n)
    gy = cheb_grid(n, height)
    xx, yy = np.meshgrid(gx.points, gy.points[:n])
    return BioheatMesh(n=n, gx=gx, gy=gy, x=xx.ravel(), y=yy.ravel())


def _zero_source(x, y, t):
    return np.zeros_like(x)


def assemble_bioheat(mesh: BioheatMesh | int, params: BioheatParams | None = None,
                     perfusion=None) -> SemiDiscreteSystem:
    """Semi-discrete model ``U' = (Lap - diag(p)) U + S(t)``.

    The perfusion vector ``p`` is the parameter; ``dA/dp_i = -e_i e_i^T``.
    """
    params = params or BioheatParams()
    if isinstance(mesh, int):
        mesh = bioheat_mesh(mesh, params.height)
    if not np.isclose(mesh.gy.length, params.height):
        raise DimensionError("mesh height does not match params.height")
    n, nx, ny = mesh.n, mesh.nx, mesh.ny
    dx = np.array(mesh.gx.diff)
    dy = np.array(mesh.gy.diff)

    dx_flux = dx.copy()
    dx_flux[[0, n]] = 0.0
    dxx = dx @ dx_flux

    dy_flux = dy.copy()
    dy_flux[0] = 0.0
    dy_flux[0, 0] = params.biot
    dyy_full = dy @ dy_flux
    dyy = dyy_full[:ny, :ny]
    # affine pieces: -B U_inf in the y=0 flux row, Dirichlet value at the top
    y_const = dy[:ny, 0] * (-params.biot * params.u_inf) + dyy_full[:ny, n] * params.top_value

    lap = np.kron(np.eye(ny), dxx) + np.kron(dyy, np.eye(nx))
    bc_forcing = np.repeat(y_const, nx)
    source = params.source or _zero_source
    xs, ys = mesh.x, mesh.y

    def forcing(t):
        return source(xs, ys, t) + bc_forcing

    if params.initial is None:
        u0 = np.zeros(mesh.size)
    else:
        u0 = np.asarray(params.initial(xs, ys), dtype=float)
    if not np.all(np.isfinite(u0)):
        raise DomainError("initial state must be finite")

    size = mesh.size
    term = ParamTerm(0, size, -np.eye(size), np.eye(size))
    sys = SemiDiscreteSystem(capacity=np.ones(size), base=lap, terms=(term,),
                             forcing=forcing, initial=u0, n_params=size,
                             meta={"model": "bioheat", "mesh": mesh, "params": params})
    if perfusion is not None:
        perfusion = np.asarray(perfusion, dtype=float)
        if perfusion.shape != (size,):
            raise DimensionError(f"perfusion must have length {size}, got {perfusion.shape}")
        sys = sys.at(perfusion)
    return sys


@dataclass(frozen=True)
class ManufacturedBioheat:
    """Closed-form solution, matching source and perfusion."""

    biot: float
    u_inf: float

    def solution(self, x, y, t):
        b = self.biot
        return (np.exp(-np.pi**2 * t) / (2.0 * (b + 1.0))
                * ((b + 1.0) * y**2 - b * y - 1.0) * np.cos(np.pi * x)
                + b * self.u_inf / (b + 1.0) * (1.0 - y))

    def solution_t(self, x, y, t):
        b = self.biot
        return (-np.pi**2 * np.exp(-np.pi**2 * t) / (2.0 * (b + 1.0))
                * ((b + 1.0) * y**2 - b * y - 1.0) * np.cos(np.pi * x))

    def laplacian(self, x, y, t):
        # U_xx = -pi^2 (first term), U_yy = e^{-pi^2 t} cos(pi x)
        return self.solution_t(x, y, t) + np.exp(-np.pi**2 * t) * np.cos(np.pi * x)

    @staticmethod
    def perfusion(x, y):
        return np.sin(np.pi * x * y)

    def source(self, x, y, t):
        return (self.solution_t(x, y, t) - self.laplacian(x, y, t)
                + self.perfusion(x, y) * self.solution(x, y, t))

    def initial(self, x, y):
        return self.solution(x, y, 0.0)

    def params(self) -> BioheatParams:
        return BioheatParams(biot=self.biot, u_inf=self.u_inf, height=1.0,
                             source=self.source, initial=self.initial)


def manufactured_bioheat_data(mesh: BioheatMesh | int, t_grid=None,
                              biot: float = 0.015, u_inf: float = 0.001,
                              height: float = 1.0):
    """Exact samples on ``mesh`` x ``t_grid``, the manufactured problem and
    the exact perfusion vector.

    Returns ``(samples, problem, perfusion)`` where ``samples`` has one row
    per time (``None`` if no grid is given).
    """
    if height != 1.0:
        raise DomainError("the closed-form solution assumes height == 1")
    if isinstance(mesh, int):
        mesh = bioheat_mesh(mesh, height)
    prob = ManufacturedBioheat(biot, u_inf)
    samples = None
    if t_grid is not None:
        samples = np.array([prob.solution(mesh.x, mesh.y, t) for t in np.atleast_1d(t_grid)])
    return samples, prob, prob.perfusion(mesh.x, mesh.y)


def default_bioheat_sensors(mesh: BioheatMesh, times, nx_sensors: int = 9,
                            ny_sensors: int = 7) -> SensorLayout:
    """Tensor subsample of interior nodes (9 x 7 = 63 by default)."""
    n = mesh.n
    if nx_sensors > n - 1 or ny_sensors > n - 1:
        raise DimensionError("more sensors than interior nodes per direction")
    ii = np.unique(np.round(np.linspace(1, n - 1, nx_sensors)).astype(int))
    jj = np.unique(np.round(np.linspace(1, n - 1, ny_sensors)).astype(int))
    if ii.size != nx_sensors or jj.size != ny_sensors:
        raise DimensionError("sensor subsample collapsed; grid too coarse")
    idx = (jj[:, None] * mesh.nx + ii[None, :]).ravel()
    return SensorLayout(indices=idx, times=np.asarray(times, dtype=float))
