"""Levenberg-Marquardt iteration with a (possibly singular) scaling ``L^T L``.

Each step solves ``(J^T J + lam L^T L) d = -J^T F`` with ``lam = ||F||^2``;
the update is accepted outright when it contracts the residual by the
factor ``vartheta`` and otherwise goes through Armijo backtracking.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import CompletenessError, ConfigError, DimensionError, DomainError
from .gsvd import gamma_filter, gsvd_pair, step_norm_bound
from .scaling import ScalingOperator, completeness_gamma

__all__ = [
    "NlsProblem",
    "StepMethod",
    "StopReason",
    "Discrepancy",
    "SolverConfig",
    "IterationRecord",
    "SolveTrace",
    "damping",
    "gradient",
    "lm_step",
    "model_value",
    "line_search",
    "solve",
    "finite_difference_jacobian",
    "GradientRelatedReport",
    "gradient_related_check",
    "LocalRateReport",
    "local_rate_check",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("k", "lambda", "resid_norm", "grad_norm", "step_norm", "alpha",
                 "model_value", "dir_deriv", "dist")


@dataclass
class NlsProblem:
    """``min 0.5 ||F(x)||^2`` with an explicit Jacobian.

    ``dist`` (distance to the zero set) is only known for synthetic test
    problems; the solver records it when present and never relies on it.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    n: int
    m: int
    dist: Optional[Callable[[np.ndarray], float]] = None
    name: str = ""

    def __post_init__(self):
        if self.m < self.n:
            raise DimensionError(f"need m >= n, got m={self.m}, n={self.n}")

    def phi(self, x) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ r)


class StepMethod(str, Enum):
    NORMAL_CHOLESKY = "normal_cholesky"
    AUGMENTED_QR = "augmented_qr"


class StopReason(str, Enum):
    DISCREPANCY = "discrepancy"
    SMALL_GRADIENT = "small_gradient"
    SMALL_STEP = "small_step"
    MAX_ITER = "max_iter"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class Discrepancy:
    """Stop once ``||F|| <= tau * noise_norm``."""

    tau: float
    noise_norm: float

    def __post_init__(self):
        if not self.tau >= 1.0:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not self.noise_norm >= 0.0:
            raise ConfigError(f"noise_norm must be >= 0, got {self.noise_norm}")

    def reached(self, resid_norm: float) -> bool:
        return resid_norm <= self.tau * self.noise_norm


@dataclass(frozen=True)
class SolverConfig:
    nu: float = 1e-4
    eta: float = 0.5
    vartheta: float = 0.9
    eps: float = 5e-4
    max_iter: int = 200
    max_backtracks: int = 40
    step_method: StepMethod = StepMethod.AUGMENTED_QR
    discrepancy: Optional[Discrepancy] = None
    # per-iteration GSVD diagnostics (gamma_hat, ||Gamma||, step bound)
    diagnostics: bool = False

    def __post_init__(self):
        for name in ("nu", "eta", "vartheta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.eps >= 0.0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")
        if self.max_iter < 0 or self.max_backtracks < 0:
            raise ConfigError("max_iter and max_backtracks must be non-negative")
        object.__setattr__(self, "step_method", StepMethod(self.step_method))


@dataclass
class IterationRecord:
    k: int
    x: np.ndarray
    lam: float
    resid_norm: float
    grad_norm: float
    step_norm: Optional[float] = None
    alpha: Optional[float] = None
    model_value: Optional[float] = None
    dir_deriv: Optional[float] = None
    linear_resid: Optional[float] = None
    dist: Optional[float] = None
    gamma_hat: Optional[float] = None
    filter_norm: Optional[float] = None
    step_bound: Optional[float] = None

    def as_row(self) -> dict:
        return {"k": self.k, "lambda": self.lam, "resid_norm": self.resid_norm,
                "grad_norm": self.grad_norm, "step_norm": self.step_norm,
                "alpha": self.alpha, "model_value": self.model_value,
                "dir_deriv": self.dir_deriv, "dist": self.dist}


@dataclass
class SolveTrace:
    """One record per visited iterate; the last one carries no step."""

    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: Optional[StopReason] = None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def iterations(self) -> int:
        """Number of accepted steps."""
        return sum(1 for r in self.records if r.alpha is not None)

    @property
    def steps(self) -> list[IterationRecord]:
        return [r for r in self.records if r.step_norm is not None]

    def column(self, name: str) -> np.ndarray:
        attr = "lam" if name == "lambda" else name
        return np.array([np.nan if getattr(r, attr) is None else getattr(r, attr)
                         for r in self.records], dtype=float)

    def iterates(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    def to_csv(self, target=None) -> str:
        """Write the trace as CSV (to a path or file object) and return the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            row = r.as_row()
            w.writerow(["" if row[c] is None else _fmt(row[c]) for c in TRACE_COLUMNS])
        text = buf.getvalue()
        if target is not None:
            if hasattr(target, "write"):
                target.write(text)
            else:
                with open(target, "w", newline="") as fh:
                    fh.write(text)
        return text


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def damping(F) -> float:
    """``lam = ||F||_2^2``."""
    F = np.asarray(F, dtype=float)
    return float(F @ F)


def gradient(J, F) -> np.ndarray:
    """``grad phi = J^T F``."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    F = np.asarray(F, dtype=float)
    if J.shape[0] != F.shape[0]:
        raise DimensionError(f"J has {J.shape[0]} rows but F has length {F.shape[0]}")
    return J.T @ F


def _as_matrix(L, n: int) -> np.ndarray:
    if isinstance(L, ScalingOperator):
        lmat = L.entries
    else:
        lmat = np.asarray(L, dtype=float)
        if lmat.ndim == 1:
            lmat = lmat.reshape(1, -1) if lmat.size else lmat.reshape(0, n)
    if lmat.shape[1] != n:
        raise DimensionError(f"L has {lmat.shape[1]} columns, expected {n}")
    return lmat


def lm_step(J, F, L, lam: float, method=StepMethod.AUGMENTED_QR) -> np.ndarray:
    """Solve ``(J^T J + lam L^T L) d = -J^T F``.

    ``augmented_qr`` solves the equivalent least-squares problem
    ``min ||[J; sqrt(lam) L] d + [F; 0]||`` and avoids forming ``J^T J``.
    """
    if not lam > 0:
        raise DomainError(f"damping must be positive, got {lam}")
    J = np.atleast_2d(np.asarray(J, dtype=float))
    F = np.asarray(F, dtype=float)
    n = J.shape[1]
    lmat = _as_matrix(L, n)
    method = StepMethod(method)

    if method is StepMethod.NORMAL_CHOLESKY:
        a = J.T @ J + lam * (lmat.T @ lmat)
        try:
            c = sla.cho_factor(a)
        except np.linalg.LinAlgError as exc:
            raise CompletenessError("J^T J + lam L^T L is not positive definite") from exc
        return -sla.cho_solve(c, J.T @ F)

    k = np.vstack([J, np.sqrt(lam) * lmat])
    rhs = np.concatenate([-F, np.zeros(lmat.shape[0])])
    q, r = np.linalg.qr(k)
    dr = np.abs(np.diag(r))
    if dr.size and (dr.max() == 0.0 or dr.min() <= 1e-13 * dr.max()):
        raise CompletenessError("[J; sqrt(lam) L] is rank deficient")
    return sla.solve_triangular(r, q.T @ rhs)


def model_value(J, F, L, lam: float, d) -> float:
    """``||J d + F||^2 + lam ||L d||^2``."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    lmat = _as_matrix(L, J.shape[1])
    r = J @ d + F
    ld = lmat @ d
    return float(r @ r + lam * (ld @ ld))


def line_search(problem: NlsProblem, x, d, config: SolverConfig, F=None, grad=None):
    """Step-size selection; returns ``(alpha, x_new, F_new)``.

    ``alpha`` is ``None`` when backtracking exhausted ``max_backtracks``.
    """
    x = np.asarray(x, dtype=float)
    if F is None:
        F = problem.residual(x)
    if grad is None:
        grad = gradient(problem.jacobian(x), F)
    fnorm = float(np.linalg.norm(F))
    phi0 = 0.5 * fnorm**2
    slope = float(grad @ d)

    x_trial = x + d
    F_trial = problem.residual(x_trial)
    if np.linalg.norm(F_trial) <= config.vartheta * fnorm:
        return 1.0, x_trial, F_trial

    alpha = 1.0
    for _ in range(config.max_backtracks + 1):
        if 0.5 * float(F_trial @ F_trial) - phi0 <= config.nu * alpha * slope:
            return alpha, x_trial, F_trial
        alpha *= config.eta
        x_trial = x + alpha * d
        F_trial = problem.residual(x_trial)
    return None, x, F


def solve(problem: NlsProblem, L, x0, config: SolverConfig | None = None):
    """Run the line-search LM iteration from ``x0``.

    Returns ``(x_final, trace)``.  A failed line search ends the run with
    ``StopReason.LINE_SEARCH_FAILURE`` instead of raising.
    """
    config = config or SolverConfig()
    x = np.array(x0, dtype=float)
    if x.shape != (problem.n,):
        raise DimensionError(f"x0 must have shape ({problem.n},), got {x.shape}")
    lmat = _as_matrix(L, problem.n)
    lop = L if isinstance(L, ScalingOperator) else ScalingOperator(lmat)
    lcomp = lop.compressed() if config.diagnostics else None

    trace = SolveTrace()
    F = problem.residual(x)
    x_prev = None
    k = 0
    while True:
        J = problem.jacobian(x)
        grad = gradient(J, F)
        lam = damping(F)
        fnorm = math.sqrt(lam)
        rec = IterationRecord(k=k, x=x.copy(), lam=lam, resid_norm=fnorm,
                              grad_norm=float(np.linalg.norm(grad)),
                              dist=None if problem.dist is None else float(problem.dist(x)))
        trace.records.append(rec)

        reason = _stop_reason(rec, x, x_prev, k, config)
        if reason is not None:
            trace.stop_reason = reason
            return x, trace

        d = lm_step(J, F, lmat, lam, config.step_method)
        rec.step_norm = float(np.linalg.norm(d))
        rec.dir_deriv = float(grad @ d)
        lin = J @ d + F
        rec.linear_resid = float(np.linalg.norm(lin))
        rec.model_value = model_value(J, F, lmat, lam, d)
        if config.diagnostics:
            _diagnose(rec, J, F, lmat, lcomp, lam)

        alpha, x_new, F_new = line_search(problem, x, d, config, F=F, grad=grad)
        if alpha is None:
            trace.stop_reason = StopReason.LINE_SEARCH_FAILURE
            return x, trace
        rec.alpha = alpha
        x_prev, x, F = x, x_new, F_new
        k += 1


def _stop_reason(rec: IterationRecord, x, x_prev, k, config: SolverConfig):
    if config.discrepancy is not None and config.discrepancy.reached(rec.resid_norm):
        return StopReason.DISCREPANCY
    if rec.resid_norm == 0.0 or rec.grad_norm < config.eps:
        return StopReason.SMALL_GRADIENT
    if x_prev is not None:
        dx = float(np.linalg.norm(x - x_prev))
        nx = float(np.linalg.norm(x))
        rel = dx / nx if nx > 0 else (0.0 if dx == 0 else math.inf)
        if rel < config.eps:
            return StopReason.SMALL_STEP
    if k >= config.max_iter:
        return StopReason.MAX_ITER
    return None


def _diagnose(rec: IterationRecord, J, F, lmat, lcomp, lam) -> None:
    rec.gamma_hat = completeness_gamma(J, lmat)
    if J.shape[0] < J.shape[1] or rec.gamma_hat <= 0:
        return
    try:
        f = gsvd_pair(J, lcomp.entries)
    except (CompletenessError, DimensionError):
        return
    g = np.diag(gamma_filter(f, lam))
    rec.filter_norm = float(g.max()) if g.size else 0.0
    rec.step_bound = step_norm_bound(f, lam, F, rec.gamma_hat)


def finite_difference_jacobian(fun, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * h))
    return np.column_stack(cols)


@dataclass
class GradientRelatedReport:
    margins: np.ndarray  # bound minus directional derivative; >= -tol passes
    passed: bool


def gradient_related_check(trace: SolveTrace, gamma_hats=None, tol: float = 1e-10):
    """Check ``grad^T d <= -gamma_hat min(1, lam) ||d||^2`` on every step."""
    steps = trace.steps
    if gamma_hats is None:
        gamma_hats = [r.gamma_hat for r in steps]
    if len(gamma_hats) != len(steps):
        raise DimensionError("need one completeness constant per step")
    margins = []
    for r, g in zip(steps, gamma_hats):
        if g is None:
            raise ValueError(f"no completeness constant for iteration {r.k}")
        bound = -g * min(1.0, r.lam) * r.step_norm**2
        margins.append(bound - r.dir_deriv)
    margins = np.array(margins)
    return GradientRelatedReport(margins=margins, passed=bool(np.all(margins >= -tol)))


@dataclass
class LocalRateReport:
    ratios: np.ndarray      # dist_{k+1} / dist_k^2 over the measured window
    max_ratio: float
    c3: float               # max ||d_k|| / dist_k
    c4: float               # max ||J_k d_k + F_k|| / dist_k^2
    accelerating: bool      # second differences of log dist are <= 0
    decreasing: bool


def local_rate_check(trace: SolveTrace, floor: float = 1e-12, window: int | None = 3):
    """Empirical quadratic-rate diagnostics from ``dist`` recorded in the trace.

    Only the leading iterates with ``dist > floor`` enter, so roundoff-level
    distances do not pollute the ratios.  ``window`` keeps the last few ratios.
    """
    dist = trace.column("dist")
    if np.any(np.isnan(dist)):
        raise ValueError("trace has no distance information")
    # leading run of iterates above the floor; anything at or below it is
    # dominated by rounding and says nothing about the rate
    below = np.flatnonzero(dist <= floor)
    dk = dist[: below[0]] if below.size else dist
    ratios = dk[1:] / dk[:-1] ** 2 if dk.size > 1 else np.zeros(0)
    if window is not None:
        ratios = ratios[-window:]
    steps = [r for r in trace.steps if r.dist is not None and r.dist > floor]
    c3 = max((r.step_norm / r.dist for r in steps), default=0.0)
    c4 = max((r.linear_resid / r.dist**2 for r in steps), default=0.0)
    # the shape tests look at the same final window as the ratios
    tail = dk if window is None else dk[-(window + 1):]
    pos = tail[tail > 0]
    logd = np.log(pos)
    accelerating = bool(np.all(np.diff(logd, 2) <= 1e-12)) if logd.size > 2 else True
    decreasing = bool(np.all(np.diff(pos) < 0))
    return LocalRateReport(ratios=ratios, max_ratio=float(ratios.max()) if ratios.size else 0.0,
                           c3=float(c3), c4=float(c4), accelerating=accelerating, decreasing=decreasing)
