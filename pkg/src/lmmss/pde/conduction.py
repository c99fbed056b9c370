"""Transient heat conduction with a diagonal conductivity tensor.

    C u_t = d/dx (k11 u_x) + d/dy (k22 u_y) - q u + g     on (0, l1) x (0, l2)

Each face carries either a Robin condition ``k du/dn + h (u - f) = 0``
(``n`` the outward normal) or a prescribed conductive flux ``k du/dn = f``.
The discretization is in flux form on the full ``(n + 1)^2`` Chebyshev
tensor grid (x index fastest)::

    A u = Gx W_x + Gy W_y - q u,      W_x = k11 u_x  at nodes off the x-faces

and on the x-faces ``W_x`` is replaced by the value the boundary condition
dictates, so conductivity samples on a face never enter the flux normal to
that face. The operator is affine in ``k = (k11; k22)`` (or in a single
``k`` for the isotropic model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import DimensionError, DomainError
from .cheb import ChebGrid, cheb_grid, cheb_interp_matrix
from .system import ParamTerm, SemiDiscreteSystem, SensorLayout, TimeGrid, crank_nicolson

__all__ = [
    "FaceCondition",
    "ConductionParams",
    "ConductionMesh",
    "conduction_mesh",
    "assemble_conduction",
    "isotropic_example",
    "orthotropic_example",
    "full_grid_sensors",
    "interpolate_states",
    "reference_states",
]

FACES = ("x0", "x1", "y0", "y1")


def _const(value: float):
    def f(*args):
        return np.full(np.shape(args[0]), float(value))
    return f


@dataclass(frozen=True)
class FaceCondition:
    """Boundary data on one face.

    ``kind="robin"``: ``k du/dn + h(s) (u - f(s, t)) = 0``.
    ``kind="flux"``: ``k du/dn = f(s, t)``.
    ``s`` is the coordinate along the face.
    """

    kind: str = "robin"
    h: Callable = field(default_factory=lambda: _const(0.0))
    f: Callable = field(default_factory=lambda: _const(0.0))

    def __post_init__(self):
        if self.kind not in ("robin", "flux"):
            raise DomainError(f"unknown face kind {self.kind!r}")


@dataclass(frozen=True)
class ConductionParams:
    capacity: Callable = field(default_factory=lambda: _const(1.0))   # C(x, y)
    reaction: Callable = field(default_factory=lambda: _const(0.0))   # q(x, y)
    source: Optional[Callable] = None                                 # g(x, y, t)
    initial: Optional[Callable] = None                                # u0(x, y)
    faces: dict = field(default_factory=lambda: {f: FaceCondition() for f in FACES})
    lengths: tuple = (1.0, 1.0)
    isotropic: bool = False

    def __post_init__(self):
        missing = set(FACES) - set(self.faces)
        if missing:
            raise DomainError(f"missing boundary faces: {sorted(missing)}")
        if len(self.lengths) != 2 or min(self.lengths) <= 0:
            raise DomainError("lengths must be two positive numbers")


@dataclass(frozen=True, eq=False)
class ConductionMesh:
    n: int
    gx: ChebGrid
    gy: ChebGrid
    x: np.ndarray
    y: np.ndarray

    @property
    def side(self) -> int:
        return self.n + 1

    @property
    def size(self) -> int:
        return self.side ** 2


def conduction_mesh(n: int, lengths=(1.0, 1.0)) -> ConductionMesh:
    gx = cheb_grid(n, lengths[0])
    gy = cheb_grid(n, lengths[1])
    xx, yy = np.meshgrid(gx.points, gy.points)
    return ConductionMesh(n=n, gx=gx, gy=gy, x=xx.ravel(), y=yy.ravel())


def _face_pieces(mesh: ConductionMesh, faces: dict):
    """Per-direction boundary masks, the coefficient of ``u`` in the face flux
    and a callable giving its constant part at time ``t``."""
    side = mesh.side
    i = np.tile(np.arange(side), side)
    j = np.repeat(np.arange(side), side)
    x, y = mesh.x, mesh.y
    spec = {
        # face: (node mask, coordinate along the face, outward sign of the axis)
        "x0": (i == 0, y, -1.0),
        "x1": (i == mesh.n, y, 1.0),
        "y0": (j == 0, x, -1.0),
        "y1": (j == mesh.n, x, 1.0),
    }
    out = {}
    for axis, pair in (("x", ("x0", "x1")), ("y", ("y0", "y1"))):
        mask = np.zeros(mesh.size, dtype=bool)
        coef = np.zeros(mesh.size)
        parts = []
        for name in pair:
            nodes, s, sign = spec[name]
            cond = faces[name]
            mask |= nodes
            s_nodes = s[nodes]
            if cond.kind == "robin":
                # k u_axis = -sign h (u - f)
                h = np.asarray(cond.h(s_nodes), dtype=float) * np.ones(s_nodes.size)
                coef[nodes] = -sign * h
                parts.append((nodes, s_nodes, cond.f, sign * h))
            else:
                # k u_axis = sign f
                parts.append((nodes, s_nodes, cond.f, np.full(s_nodes.size, sign)))
        out[axis] = (mask, coef, parts)
    return out


def assemble_conduction(mesh: ConductionMesh | int, params: ConductionParams | None = None,
                        conductivity=None) -> SemiDiscreteSystem:
    """Semi-discrete model ``C u' = A(k) u + S(t)``.

    The parameter vector is ``(k11; k22)`` of length ``2 (n + 1)^2``, or a
    single ``k`` of length ``(n + 1)^2`` when ``params.isotropic``.
    """
    params = params or ConductionParams()
    if isinstance(mesh, int):
        mesh = conduction_mesh(mesh, params.lengths)
    size = mesh.size
    eye = np.eye(mesh.side)
    gx = np.kron(eye, np.asarray(mesh.gx.diff))
    gy = np.kron(np.asarray(mesh.gy.diff), eye)
    x, y = mesh.x, mesh.y

    capacity = np.asarray(params.capacity(x, y), dtype=float) * np.ones(size)
    if np.any(capacity <= 0) or not np.all(np.isfinite(capacity)):
        raise DomainError("heat capacity must be positive and finite")
    q = np.asarray(params.reaction(x, y), dtype=float) * np.ones(size)
    if not np.all(np.isfinite(q)):
        raise DomainError("reaction term must be finite")

    pieces = _face_pieces(mesh, params.faces)
    mask_x, coef_x, parts_x = pieces["x"]
    mask_y, coef_y, parts_y = pieces["y"]
    base = gx * coef_x[None, :] + gy * coef_y[None, :] - np.diag(q)

    right_x = (~mask_x)[:, None] * gx
    right_y = (~mask_y)[:, None] * gy
    if params.isotropic:
        terms = (ParamTerm(0, size, gx, right_x), ParamTerm(0, size, gy, right_y))
        n_params = size
    else:
        terms = (ParamTerm(0, size, gx, right_x), ParamTerm(size, 2 * size, gy, right_y))
        n_params = 2 * size

    source = params.source

    def face_values(parts, t):
        w = np.zeros(size)
        for nodes, s, f, scale in parts:
            w[nodes] = scale * np.asarray(f(s, t), dtype=float)
        return w

    def forcing(t):
        s = gx @ face_values(parts_x, t) + gy @ face_values(parts_y, t)
        if source is not None:
            s = s + source(x, y, t)
        return s

    u0 = np.zeros(size) if params.initial is None else \
        np.asarray(params.initial(x, y), dtype=float) * np.ones(size)
    if not np.all(np.isfinite(u0)):
        raise DomainError("initial state must be finite")

    sys = SemiDiscreteSystem(capacity=capacity, base=base, terms=terms, forcing=forcing,
                             initial=u0, n_params=n_params,
                             meta={"model": "conduction", "mesh": mesh, "params": params})
    if conductivity is not None:
        k = np.asarray(conductivity, dtype=float)
        if k.shape != (n_params,):
            raise DimensionError(f"conductivity must have length {n_params}, got {k.shape}")
        if np.any(k <= 0):
            raise DomainError("conductivity must be positive")
        sys = sys.at(k)
    return sys


@dataclass(frozen=True)
class ConductionExample:
    """A benchmark setup: model data, exact conductivity and (if known) exact state."""

    name: str
    params: ConductionParams
    k11: Callable
    k22: Callable
    solution: Optional[Callable] = None      # u(x, y, t)
    t_final: float = 1.0

    def conductivity(self, mesh: ConductionMesh) -> np.ndarray:
        a = self.k11(mesh.x, mesh.y)
        if self.params.isotropic:
            return np.asarray(a, dtype=float)
        return np.concatenate([a, self.k22(mesh.x, mesh.y)])


def isotropic_example() -> ConductionExample:
    """``k = (1 + x + y) / 12``, zero source and initial state, unit heat
    fluxes: out through ``x = 0`` and ``y = 0``, in through ``x = 1`` and ``y = 1``.
    No closed form; data come from :func:`reference_states`."""

    def k(x, y):
        return (1.0 + x + y) / 12.0

    faces = {
        "x0": FaceCondition("flux", f=_const(-1.0)),
        "x1": FaceCondition("flux", f=_const(1.0)),
        "y0": FaceCondition("flux", f=_const(-1.0)),
        "y1": FaceCondition("flux", f=_const(1.0)),
    }
    params = ConductionParams(faces=faces, isotropic=True)
    return ConductionExample("isotropic", params, k, k)


def orthotropic_example() -> ConductionExample:
    """Closed-form orthotropic case with unit Robin coefficients on every face."""
    pi = np.pi

    def u(x, y, t):
        return np.exp(-t) * (np.sin(pi * x) * np.sin(pi * y) + (pi + 1) * (x + y) + 1)

    def k11(x, y):
        return (1.0 + x + y) / 12.0

    def k22(x, y):
        return (1.0 + 0.5 * x + y) / 12.0

    def g(x, y, t):
        e = np.exp(-t)
        return (-u(x, y, t)
                - e / 12.0 * (2 * pi + 2 + pi * np.sin(pi * (x + y)))
                + pi**2 * e / 12.0 * (2 + 1.5 * x + 2 * y) * np.sin(pi * x) * np.sin(pi * y))

    # f = u + k du/dn evaluated on each face
    def f1(s, t):
        return -(1 + s) / 12 * np.exp(-t) * (pi * np.sin(pi * s) + pi + 1) \
            + np.exp(-t) * ((pi + 1) * s + 1)

    def f2(s, t):
        return (2 + s) / 12 * np.exp(-t) * (-pi * np.sin(pi * s) + pi + 1) \
            + np.exp(-t) * ((pi + 1) * (1 + s) + 1)

    def f3(s, t):
        return -(1 + 0.5 * s) / 12 * np.exp(-t) * (pi * np.sin(pi * s) + pi + 1) \
            + np.exp(-t) * ((pi + 1) * s + 1)

    def f4(s, t):
        return (2 + 0.5 * s) / 12 * np.exp(-t) * (-pi * np.sin(pi * s) + pi + 1) \
            + np.exp(-t) * ((pi + 1) * (1 + s) + 1)

    one = _const(1.0)
    faces = {
        "x0": FaceCondition("robin", h=one, f=f1),
        "x1": FaceCondition("robin", h=one, f=f2),
        "y0": FaceCondition("robin", h=one, f=f3),
        "y1": FaceCondition("robin", h=one, f=f4),
    }
    params = ConductionParams(source=g, initial=lambda x, y: u(x, y, 0.0), faces=faces)
    return ConductionExample("orthotropic", params, k11, k22, solution=u)


def full_grid_sensors(mesh: ConductionMesh, times) -> SensorLayout:
    """Every grid node observed at every listed time."""
    return SensorLayout(indices=np.arange(mesh.size), times=np.asarray(times, dtype=float))


def interpolate_states(states, fine: ConductionMesh, coarse: ConductionMesh) -> np.ndarray:
    """Tensor-product Chebyshev interpolation of fine-grid states (one per row)."""
    ix = cheb_interp_matrix(fine.gx, coarse.gx.points)
    iy = cheb_interp_matrix(fine.gy, coarse.gy.points)
    states = np.atleast_2d(states)
    side = fine.side
    out = []
    for s in states:
        grid = s.reshape(side, side)           # rows: y index, columns: x index
        out.append((iy @ grid @ ix.T).ravel())
    return np.array(out)


def reference_states(example: ConductionExample, mesh: ConductionMesh, time_grid: TimeGrid,
                     refine: int = 2) -> np.ndarray:
    """Exact states at the observation times, one row per time.

    With a closed form it is sampled directly; otherwise the model is solved
    on a grid ``refine`` times finer (in ``n`` and in time) and interpolated
    down to ``mesh``.
    """
    obs = time_grid.obs_times
    if example.solution is not None:
        return np.array([example.solution(mesh.x, mesh.y, t) for t in obs])
    fine = conduction_mesh(refine * mesh.n, example.params.lengths)
    sys = assemble_conduction(fine, example.params, example.conductivity(fine))
    fine_grid = TimeGrid(time_grid.t_final, time_grid.n_obs, refine * time_grid.substeps)
    traj = crank_nicolson(sys, fine_grid.times)
    return interpolate_states(traj[fine_grid.obs_index], fine, mesh)
