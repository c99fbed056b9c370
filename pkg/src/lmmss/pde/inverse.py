"""Observed-trajectory least-squares problems for a semi-discrete model."""

from __future__ import annotations

import numpy as np

from ..solver import NlsProblem
from .system import (SemiDiscreteSystem, SensorLayout, TimeGrid, crank_nicolson,
                     observe, sensitivity_jacobian)

__all__ = ["ForwardModel", "parameter_fit_problem"]


class ForwardModel:
    """``theta -> observed Crank-Nicolson states`` with its sensitivity Jacobian.

    The last trajectory is cached so that a residual followed by a Jacobian
    at the same point costs one forward solve.
    """

    def __init__(self, sys: SemiDiscreteSystem, time_grid: TimeGrid, sensors: SensorLayout):
        self.sys = sys
        self.time_grid = time_grid
        self.sensors = sensors
        self._times = time_grid.times
        self._key = None
        self._traj = None

    @property
    def n_obs(self) -> int:
        return self.sensors.size

    @property
    def n_params(self) -> int:
        return self.sys.n_params

    def trajectory(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key != self._key:
            self._traj = crank_nicolson(self.sys, self._times, theta)
            self._key = key
        return self._traj

    def __call__(self, theta) -> np.ndarray:
        return observe(self.trajectory(theta), self._times, self.sensors)

    def jacobian(self, theta) -> np.ndarray:
        traj = self.trajectory(theta)
        return sensitivity_jacobian(self.sys, theta, traj, self._times, self.sensors)


def parameter_fit_problem(model: ForwardModel, data, name: str = "") -> NlsProblem:
    """``F(theta) = model(theta) - data``."""
    data = np.asarray(data, dtype=float).copy()
    if data.shape != (model.n_obs,):
        raise ValueError(f"data must have length {model.n_obs}, got {data.shape}")
    return NlsProblem(residual=lambda th: model(th) - data,
                      jacobian=model.jacobian,
                      n=model.n_params, m=model.n_obs, name=name)
