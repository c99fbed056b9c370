"""Semi-discrete linear systems ``C u' = A(theta) u + S(t)`` and their time stepping.

``A`` is affine in the parameters::

    A(theta) = A0 + sum_t  left_t diag(theta[slice_t]) right_t

so ``dA/dtheta_i`` is a sum of rank-one matrices and the sensitivity
right-hand side ``(dA/dtheta_i) u`` is cheap to form for all ``i`` at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from ..errors import DimensionError, DomainError

__all__ = [
    "ParamTerm",
    "SemiDiscreteSystem",
    "SensorLayout",
    "TimeGrid",
    "crank_nicolson",
    "rk_cn_predictor_corrector",
    "sensitivity_jacobian",
    "observe",
]


@dataclass(frozen=True, eq=False)
class ParamTerm:
    """Contribution ``left diag(theta[start:stop]) right`` to ``A``."""

    start: int
    stop: int
    left: np.ndarray   # dof x (stop - start)
    right: np.ndarray  # (stop - start) x dof


@dataclass(frozen=True, eq=False)
class SemiDiscreteSystem:
    capacity: np.ndarray
    base: np.ndarray
    terms: tuple[ParamTerm, ...]
    forcing: Callable[[float], np.ndarray]
    initial: np.ndarray
    n_params: int
    theta: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def dof(self) -> int:
        return self.initial.size

    def operator(self, theta=None) -> np.ndarray:
        theta = self._theta(theta)
        a = self.base.copy()
        for t in self.terms:
            a += t.left @ (theta[t.start:t.stop, None] * t.right)
        return a

    def derivative_action(self, u) -> np.ndarray:
        """Matrix whose column ``i`` is ``(dA/dtheta_i) u``."""
        out = np.zeros((self.dof, self.n_params))
        for t in self.terms:
            out[:, t.start:t.stop] += t.left * (t.right @ u)[None, :]
        return out

    def at(self, theta) -> "SemiDiscreteSystem":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionError(f"theta must have shape ({self.n_params},), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta must be finite")
        return replace(self, theta=theta.copy())

    def _theta(self, theta):
        if theta is None:
            theta = self.theta
        if theta is None:
            raise DomainError("no parameter vector bound to the system")
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionError(f"theta must have shape ({self.n_params},), got {theta.shape}")
        return theta


@dataclass(frozen=True)
class TimeGrid:
    """Uniform fine grid on ``[0, t_final]`` with ``n_obs`` equally spaced
    observation levels ``t_final * k / n_obs`` (k = 1..n_obs)."""

    t_final: float
    n_obs: int
    substeps: int = 10

    @property
    def n_steps(self) -> int:
        return self.n_obs * self.substeps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    @property
    def obs_index(self) -> np.ndarray:
        return np.arange(1, self.n_obs + 1) * self.substeps

    @property
    def obs_times(self) -> np.ndarray:
        return self.times[self.obs_index]


@dataclass(frozen=True)
class SensorLayout:
    """State indices observed at the listed times."""

    indices: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))

    @property
    def size(self) -> int:
        return self.indices.size * self.times.size


def _uniform_step(t_grid) -> float:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise DimensionError("time grid must be a non-empty 1D array")
    if t_grid.size == 1:
        return 0.0
    h = np.diff(t_grid)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0) or h[0] <= 0:
        raise DomainError("time grid must be uniform and increasing")
    return float(h[0])


@dataclass(frozen=True, eq=False)
class _CnMatrices:
    propagator: np.ndarray   # (C - h/2 A)^{-1} (C + h/2 A)
    half_solve: np.ndarray   # (h/2) (C - h/2 A)^{-1}


def _cn_matrices(sys: SemiDiscreteSystem, a: np.ndarray, h: float) -> _CnMatrices:
    c = np.diag(sys.capacity)
    lhs = c - 0.5 * h * a
    try:
        lu = sla.lu_factor(lhs, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError("Crank-Nicolson matrix is singular") from exc
    if np.any(np.diag(lu[0]) == 0.0):
        raise np.linalg.LinAlgError("Crank-Nicolson matrix is singular")
    prop = sla.lu_solve(lu, c + 0.5 * h * a)
    half = sla.lu_solve(lu, 0.5 * h * np.eye(sys.dof))
    return _CnMatrices(prop, half)


def crank_nicolson(sys: SemiDiscreteSystem, t_grid, theta=None) -> np.ndarray:
    """States at every point of the uniform ``t_grid`` (first row: initial state).

    ``(C - h/2 A) u^{j+1} = (C + h/2 A) u^j + h/2 (S(t_j) + S(t_{j+1}))``
    """
    t_grid = np.asarray(t_grid, dtype=float)
    h = _uniform_step(t_grid)
    out = np.empty((t_grid.size, sys.dof))
    out[0] = sys.initial
    if t_grid.size == 1:
        return out
    a = sys.operator(theta)
    m = _cn_matrices(sys, a, h)
    s_prev = sys.forcing(t_grid[0])
    u = out[0]
    for j in range(1, t_grid.size):
        s_next = sys.forcing(t_grid[j])
        u = m.propagator @ u + m.half_solve @ (s_prev + s_next)
        out[j] = u
        s_prev = s_next
    return out


def rk_cn_predictor_corrector(sys: SemiDiscreteSystem, t_grid, theta=None,
                              auto_substep: bool = True) -> np.ndarray:
    """Explicit second-order predictor (RK2 midpoint) with a trapezoidal corrector.

    The scheme is explicit, so with ``auto_substep`` each interval of
    ``t_grid`` is split until ``h * rho(C^{-1} A) <= 1``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    h = _uniform_step(t_grid)
    out = np.empty((t_grid.size, sys.dof))
    out[0] = sys.initial
    if t_grid.size == 1:
        return out
    a = sys.operator(theta) / sys.capacity[:, None]
    cinv = 1.0 / sys.capacity
    inner = 1
    if auto_substep:
        rho = float(np.max(np.abs(np.linalg.eigvals(a))))
        inner = max(1, int(np.ceil(h * rho)))
    dt = h / inner

    def f(t, u):
        return a @ u + cinv * sys.forcing(t)

    u = out[0]
    for j in range(1, t_grid.size):
        t = t_grid[j - 1]
        for s in range(inner):
            ts = t + s * dt
            f0 = f(ts, u)
            k2 = f(ts + 0.5 * dt, u + 0.5 * dt * f0)
            pred = u + dt * k2
            u = u + 0.5 * dt * (f0 + f(ts + dt, pred))
        out[j] = u
    return out


def _time_indices(t_grid, times) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    idx = []
    scale = max(abs(t_grid[-1]), 1.0)
    for t in np.atleast_1d(times):
        j = int(np.argmin(np.abs(t_grid - t)))
        if abs(t_grid[j] - t) > 1e-9 * scale:
            raise DimensionError(f"observation time {t} is not on the time grid")
        idx.append(j)
    return np.array(idx, dtype=int)


def observe(trajectory, t_grid, sensors: SensorLayout) -> np.ndarray:
    """Sample a trajectory, time-major then sensor index."""
    ti = _time_indices(t_grid, sensors.times)
    return np.asarray(trajectory)[np.ix_(ti, sensors.indices)].ravel()


def sensitivity_jacobian(sys: SemiDiscreteSystem, theta, trajectory, t_grid,
                         sensors: SensorLayout) -> np.ndarray:
    """Derivative of the observed Crank-Nicolson solution w.r.t. ``theta``.

    Column ``i`` solves ``C V' = A(theta) V + (dA/dtheta_i) u(t)``, ``V(0) = 0``,
    with the same Crank-Nicolson scheme (and the same trapezoidal treatment
    of the forcing) as the forward solve, so it is the exact Jacobian of
    the discrete forward map.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    h = _uniform_step(t_grid)
    theta = sys._theta(theta)
    obs_idx = _time_indices(t_grid, sensors.times)
    n_s = sensors.indices.size
    jac = np.zeros((obs_idx.size * n_s, sys.n_params))
    if t_grid.size == 1 or not sys.terms:
        return jac
    a = sys.operator(theta)
    m = _cn_matrices(sys, a, h)
    # (h/2) M^{-1} left_t, restricted as needed
    lefts = [(t, m.half_solve @ t.left) for t in sys.terms]
    where = {int(j): r for r, j in enumerate(obs_idx)}

    def weights(u):
        return [(t, ml, t.right @ u) for t, ml in lefts]

    v = np.zeros((sys.dof, sys.n_params))
    w_prev = weights(trajectory[0])
    for j in range(1, t_grid.size):
        w_next = weights(trajectory[j])
        v = m.propagator @ v
        for (t, ml, wp), (_, _, wn) in zip(w_prev, w_next):
            v[:, t.start:t.stop] += ml * (wp + wn)[None, :]
        if j in where:
            r = where[j]
            jac[r * n_s:(r + 1) * n_s] = v[sensors.indices]
        w_prev = w_next
    return jac
