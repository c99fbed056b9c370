"""Noise injection, error metrics and multi-seed benchmark campaigns.

Two campaigns are provided:

* perfusion recovery in the bioheat model (operators ``I`` and the gradient
  stacks ``L1``, ``L2``, ``L3``), stopped by the discrepancy principle;
* conductivity recovery in the conduction model (``I`` and the square-grid
  stacks ``L1``, ``L2``, doubled block-diagonally for two conductivities),
  stopped by the discrepancy principle for noisy data and by the
  gradient/step tolerance for exact data.

Every campaign returns an :class:`ExperimentReport` that can be written to
``<out>/<campaign>/`` as a table CSV, the resolved configuration as JSON,
and one trace CSV per seed under ``<cell>/<seed>.csv``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import scaling
from .errors import ConfigError, DomainError, LmmssError
from .pde.bioheat import (assemble_bioheat, bioheat_mesh, default_bioheat_sensors,
                          manufactured_bioheat_data)
from .pde.conduction import (assemble_conduction, conduction_mesh, full_grid_sensors,
                             isotropic_example, orthotropic_example, reference_states)
from .pde.inverse import ForwardModel, parameter_fit_problem
from .pde.system import TimeGrid, observe, rk_cn_predictor_corrector
from .solver import Discrepancy, SolverConfig, SolveTrace, StopReason, solve

log = logging.getLogger(__name__)

__all__ = [
    "NoisySample",
    "add_noise",
    "discrepancy_stop",
    "discrepancy_index",
    "check_discrepancy_stop",
    "relative_error",
    "blockwise_relative_error",
    "temperature_reconstruction_error",
    "PerfusionConfig",
    "ConductivityConfig",
    "SeedResult",
    "CellResult",
    "ExperimentReport",
    "perfusion_setup",
    "conductivity_setup",
    "run_perfusion_campaign",
    "run_conductivity_campaign",
]

CONVERGED = (StopReason.DISCREPANCY, StopReason.SMALL_GRADIENT, StopReason.SMALL_STEP)


# ---------------------------------------------------------------- noise & metrics

@dataclass(frozen=True, eq=False)
class NoisySample:
    clean: np.ndarray
    noisy: np.ndarray
    e: np.ndarray
    NL: float
    seed: int

    @property
    def noise_norm(self) -> float:
        return float(np.linalg.norm(self.e))


def add_noise(clean, NL: float, seed: int) -> NoisySample:
    """Add zero-mean Gaussian noise rescaled so ``||e|| / ||clean|| == NL``."""
    clean = np.asarray(clean, dtype=float).copy()
    if not NL >= 0.0:
        raise DomainError(f"noise level must be >= 0, got {NL}")
    norm = float(np.linalg.norm(clean))
    if NL == 0.0:
        e = np.zeros_like(clean)
    else:
        if norm == 0.0:
            raise DomainError("cannot scale relative noise to a zero signal")
        e = np.random.default_rng(seed).standard_normal(clean.shape)
        e *= NL * norm / np.linalg.norm(e)
    return NoisySample(clean=clean, noisy=clean + e, e=e, NL=float(NL), seed=int(seed))


def discrepancy_stop(resid_norm: float, tau: float, noise_norm: float) -> bool:
    """``resid_norm <= tau * noise_norm``."""
    return Discrepancy(tau, noise_norm).reached(resid_norm)


def discrepancy_index(trace: SolveTrace, tau: float, noise_norm: float) -> Optional[int]:
    """First iteration index whose residual satisfies the discrepancy principle."""
    for r in trace.records:
        if discrepancy_stop(r.resid_norm, tau, noise_norm):
            return r.k
    return None


def check_discrepancy_stop(trace: SolveTrace, tau: float, noise_norm: float) -> bool:
    """True when a discrepancy-stopped trace ends exactly at the first
    index meeting the threshold (and every earlier residual is above it)."""
    if trace.stop_reason is not StopReason.DISCREPANCY:
        return False
    return discrepancy_index(trace, tau, noise_norm) == trace.records[-1].k


def relative_error(est, exact, mask=None) -> float:
    """``||est - exact|| / ||exact||``, optionally restricted to ``mask``."""
    est = np.asarray(est, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if est.shape != exact.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {exact.shape}")
    if mask is not None:
        est, exact = est[mask], exact[mask]
    den = float(np.linalg.norm(exact))
    if den == 0.0:
        raise DomainError("relative error against a zero reference")
    return float(np.linalg.norm(est - exact)) / den


def blockwise_relative_error(est, exact, n_blocks: int) -> tuple[float, ...]:
    """Relative error of each of ``n_blocks`` equal consecutive blocks."""
    est = np.asarray(est, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if est.size % n_blocks:
        raise ValueError("vector length is not a multiple of the block count")
    return tuple(relative_error(a, b) for a, b in
                 zip(np.split(est, n_blocks), np.split(exact, n_blocks)))


def temperature_reconstruction_error(U_est, U_exact) -> float:
    return relative_error(U_est, U_exact)


# ------------------------------------------------------------------ configuration

def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class PerfusionConfig:
    n: int = 14
    t_final: float = 0.1
    n_obs: int = 8
    substeps: int = 10
    sensors: tuple = (9, 7)
    biot: float = 0.015
    u_inf: float = 0.001
    noise_levels: tuple = (1e-3, 1e-4)
    operators: tuple = ("I", "L1", "L2", "L3")
    seeds: tuple = tuple(range(10))
    tau: float = 1.05
    p0: float = 0.0
    eps: float = 5e-4
    max_iter: int = 100
    # keep the full iterate history per seed (needed for RE-vs-iteration data)
    history: bool = True
    # ignore the discrepancy principle and run max_iter steps
    no_stop: bool = False
    workers: int = 1

    def __post_init__(self):
        _validate_common(self)
        bad = set(self.operators) - {"I", "L1", "L2", "L3"}
        if bad:
            raise ConfigError(f"unknown perfusion operators: {sorted(bad)}")
        if len(self.sensors) != 2:
            raise ConfigError("sensors must be a pair (nx, ny)")

    @classmethod
    def from_dict(cls, data: dict) -> "PerfusionConfig":
        return _from_dict(cls, data)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


@dataclass(frozen=True)
class ConductivityConfig:
    example: str = "orthotropic"
    n: int = 15
    t_final: float = 1.0
    n_obs: int = 10
    substeps: int = 10
    noise_levels: tuple = (0.0, 1e-3, 1e-2)
    operators: tuple = ("I", "L1", "L2")
    seeds: tuple = tuple(range(30))
    tau: float = 1.1
    k0: float = 0.25
    eps: float = 5e-4
    max_iter: int = 100
    refine: int = 2
    history: bool = False
    no_stop: bool = False
    workers: int = 1

    def __post_init__(self):
        _validate_common(self)
        if self.example not in ("isotropic", "orthotropic"):
            raise ConfigError(f"example must be 'isotropic' or 'orthotropic', got {self.example!r}")
        bad = set(self.operators) - {"I", "L1", "L2"}
        if bad:
            raise ConfigError(f"unknown conductivity operators: {sorted(bad)}")
        if self.k0 <= 0:
            raise ConfigError("initial conductivity must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ConductivityConfig":
        return _from_dict(cls, data)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _validate_common(cfg) -> None:
    if cfg.n < 4:
        raise ConfigError("grid parameter n must be at least 4")
    if cfg.t_final <= 0 or cfg.n_obs < 1 or cfg.substeps < 1:
        raise ConfigError("time grid needs t_final > 0, n_obs >= 1, substeps >= 1")
    if any((not math.isfinite(nl)) or nl < 0 for nl in cfg.noise_levels):
        raise ConfigError("noise levels must be finite and non-negative")
    if cfg.tau < 1:
        raise ConfigError("tau must be >= 1")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ------------------------------------------------------------------------ results

@dataclass
class SeedResult:
    seed: int
    re: tuple = ()                     # one entry per parameter block
    tre: float = math.nan
    iterations: int = 0
    stop_reason: Optional[StopReason] = None
    noise_norm: float = 0.0
    trace: Optional[SolveTrace] = None
    re_history: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def converged(self) -> bool:
        return self.error is None and self.stop_reason in CONVERGED


@dataclass
class CellResult:
    noise_level: float
    operator: str
    seeds: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"nl{self.noise_level:g}_{self.operator}"

    @property
    def converged(self) -> list:
        return [s for s in self.seeds if s.converged]

    @property
    def failed(self) -> list:
        return [s for s in self.seeds if not s.converged]

    @property
    def mean_re(self) -> tuple:
        ok = self.converged
        if not ok:
            return ()
        return tuple(float(v) for v in np.mean([s.re for s in ok], axis=0))

    @property
    def mean_tre(self) -> float:
        ok = self.converged
        return float(np.mean([s.tre for s in ok])) if ok else math.nan

    @property
    def mean_iterations(self) -> float:
        ok = self.converged
        return float(np.mean([s.iterations for s in ok])) if ok else math.nan

    @property
    def max_iterations(self) -> int:
        """MI: the largest iteration count among converged seeds."""
        ok = self.converged
        return max(s.iterations for s in ok) if ok else 0


@dataclass
class ExperimentReport:
    campaign: str
    config: dict
    cells: list = field(default_factory=list)
    block_names: tuple = ("p",)

    def cell(self, noise_level: float, operator: str) -> CellResult:
        for c in self.cells:
            if c.operator == operator and math.isclose(c.noise_level, noise_level,
                                                       rel_tol=1e-12, abs_tol=0.0):
                return c
        raise KeyError((noise_level, operator))

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            row = {"NL": c.noise_level, "L": c.operator}
            re = c.mean_re or (math.nan,) * len(self.block_names)
            for name, v in zip(self.block_names, re):
                row[f"RE_{name}"] = v
            row.update(TRE=c.mean_tre, mean_iter=c.mean_iterations, MI=c.max_iterations,
                       seeds=len(c.seeds), failed=len(c.failed))
            out.append(row)
        return out

    def to_csv(self, target=None) -> str:
        rows = self.rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else ["NL", "L"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    def format_table(self) -> str:
        rows = self.rows()
        lines = []
        for r in rows:
            res = "  ".join(f"RE({n})={r[f'RE_{n}']:.4f}" for n in self.block_names)
            lines.append(f"NL={r['NL']:<8g} L={r['L']:<3} {res}  TRE={r['TRE']:.3e}  "
                         f"MI={r['MI']:<3d} failed={r['failed']}")
        return "\n".join(lines)

    def write(self, out_dir) -> Path:
        """Write ``report.csv``, ``config.json`` and per-seed traces; return the campaign dir."""
        root = Path(out_dir) / self.campaign
        root.mkdir(parents=True, exist_ok=True)
        self.to_csv(root / "report.csv")
        (root / "config.json").write_text(json.dumps(self.config, indent=2, sort_keys=True) + "\n")
        for c in self.cells:
            cdir = root / c.name
            cdir.mkdir(exist_ok=True)
            for s in c.seeds:
                if s.trace is not None:
                    text = s.trace.to_csv()
                    if s.re_history is not None:
                        text = _append_column(text, "re", s.re_history)
                    (cdir / f"{s.seed}.csv").write_text(text)
                if s.error is not None:
                    (cdir / f"{s.seed}.error.txt").write_text(s.error + "\n")
        return root


def _append_column(csv_text: str, name: str, values) -> str:
    lines = csv_text.rstrip("\n").split("\n")
    out = [lines[0] + "," + name]
    for line, v in zip(lines[1:], values):
        out.append(f"{line},{float(v):.12g}")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ campaign core

@dataclass(frozen=True, eq=False)
class _Setup:
    """Everything shared by the seeds of one campaign."""

    system: object
    time_grid: TimeGrid
    sensors: object
    clean: np.ndarray
    exact: np.ndarray
    operators: dict
    x0: np.ndarray
    n_blocks: int
    re_mask: Optional[np.ndarray] = None


def _solver_config(cfg, noise_norm: float, NL: float) -> SolverConfig:
    if cfg.no_stop:
        return SolverConfig(eps=0.0, max_iter=cfg.max_iter)
    if NL > 0:
        # noisy data: the discrepancy principle alone decides
        return SolverConfig(eps=0.0, max_iter=cfg.max_iter,
                            discrepancy=Discrepancy(cfg.tau, noise_norm))
    return SolverConfig(eps=cfg.eps, max_iter=cfg.max_iter)


def _block_re(setup: _Setup, x) -> tuple:
    if setup.n_blocks == 1:
        return (relative_error(x, setup.exact, setup.re_mask),)
    return blockwise_relative_error(x, setup.exact, setup.n_blocks)


def _run_seed(setup: _Setup, cfg, NL: float, op: str, seed: int) -> SeedResult:
    sample = add_noise(setup.clean, NL, seed)
    model = ForwardModel(setup.system, setup.time_grid, setup.sensors)
    problem = parameter_fit_problem(model, sample.noisy, name=f"{op}/{NL:g}/{seed}")
    res = SeedResult(seed=seed, noise_norm=sample.noise_norm)
    try:
        x, trace = solve(problem, setup.operators[op], setup.x0,
                         _solver_config(cfg, sample.noise_norm, NL))
        res.trace = trace
        res.stop_reason = trace.stop_reason
        res.iterations = trace.iterations
        res.re = _block_re(setup, x)
        res.tre = temperature_reconstruction_error(model(x), setup.clean)
        if cfg.history:
            res.re_history = np.array([_block_re(setup, xi)[0] if setup.n_blocks == 1
                                       else float(np.mean(_block_re(setup, xi)))
                                       for xi in trace.iterates()])
    except (LmmssError, np.linalg.LinAlgError, FloatingPointError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        log.warning("seed %d (%s, NL=%g) failed: %s", seed, op, NL, res.error)
    if not res.converged and res.error is None and not cfg.no_stop:
        log.warning("seed %d (%s, NL=%g) ended with %s", seed, op, NL, res.stop_reason)
    return res


def _run(campaign: str, setup: _Setup, cfg, block_names) -> ExperimentReport:
    report = ExperimentReport(campaign=campaign, config=cfg.to_dict(), block_names=block_names)
    for NL in cfg.noise_levels:
        for op in cfg.operators:
            cell = CellResult(noise_level=float(NL), operator=op)
            jobs = [(setup, cfg, float(NL), op, int(s)) for s in cfg.seeds]
            if cfg.workers > 1:
                with ThreadPoolExecutor(cfg.workers) as pool:
                    cell.seeds = list(pool.map(lambda a: _run_seed(*a), jobs))
            else:
                cell.seeds = [_run_seed(*a) for a in jobs]
            log.info("%s %s: RE=%s MI=%d", campaign, cell.name, cell.mean_re, cell.max_iterations)
            report.cells.append(cell)
    return report


# --------------------------------------------------------------------- perfusion

def _perfusion_operator(name: str, n: int, size: int):
    if name == "I":
        return scaling.identity(size)
    return scaling.assemble_grad2d(int(name[1]), n)


def perfusion_setup(cfg: PerfusionConfig) -> _Setup:
    """Bioheat system, sensors, clean data and exact perfusion for ``cfg``.

    Clean data come from the explicit predictor-corrector integrator with
    the exact perfusion, so the inversion (Crank-Nicolson) never sees data
    produced by its own forward map.
    """
    mesh = bioheat_mesh(cfg.n)
    _, prob, p_exact = manufactured_bioheat_data(mesh, biot=cfg.biot, u_inf=cfg.u_inf)
    system = assemble_bioheat(mesh, prob.params())
    tg = TimeGrid(cfg.t_final, cfg.n_obs, cfg.substeps)
    sensors = default_bioheat_sensors(mesh, tg.obs_times, *cfg.sensors)
    clean = observe(rk_cn_predictor_corrector(system.at(p_exact), tg.times), tg.times, sensors)
    ops = {name: _perfusion_operator(name, cfg.n, mesh.size) for name in cfg.operators}
    return _Setup(system=system, time_grid=tg, sensors=sensors, clean=clean, exact=p_exact,
                  operators=ops, x0=np.full(mesh.size, float(cfg.p0)), n_blocks=1,
                  re_mask=mesh.interior_mask())


def run_perfusion_campaign(cfg: PerfusionConfig | dict | None = None) -> ExperimentReport:
    if cfg is None:
        cfg = PerfusionConfig()
    elif isinstance(cfg, dict):
        cfg = PerfusionConfig.from_dict(cfg)
    return _run("perfusion", perfusion_setup(cfg), cfg, ("p",))


# ------------------------------------------------------------------ conductivity

def _conductivity_operator(name: str, n: int, size: int, two_blocks: bool):
    if name == "I":
        return scaling.identity(2 * size if two_blocks else size)
    inner = scaling.assemble_tilde2d(int(name[1]), n)
    return scaling.block_orthotropic(inner) if two_blocks else inner


def conductivity_setup(cfg: ConductivityConfig) -> _Setup:
    example = orthotropic_example() if cfg.example == "orthotropic" else isotropic_example()
    mesh = conduction_mesh(cfg.n, example.params.lengths)
    system = assemble_conduction(mesh, example.params)
    tg = TimeGrid(cfg.t_final, cfg.n_obs, cfg.substeps)
    sensors = full_grid_sensors(mesh, tg.obs_times)
    clean = reference_states(example, mesh, tg, refine=cfg.refine).ravel()
    two = not example.params.isotropic
    ops = {name: _conductivity_operator(name, cfg.n, mesh.size, two) for name in cfg.operators}
    return _Setup(system=system, time_grid=tg, sensors=sensors, clean=clean,
                  exact=example.conductivity(mesh), operators=ops,
                  x0=np.full(system.n_params, float(cfg.k0)), n_blocks=2 if two else 1)


def run_conductivity_campaign(cfg: ConductivityConfig | dict | None = None) -> ExperimentReport:
    if cfg is None:
        cfg = ConductivityConfig()
    elif isinstance(cfg, dict):
        cfg = ConductivityConfig.from_dict(cfg)
    names = ("k11", "k22") if cfg.example == "orthotropic" else ("k",)
    return _run(f"conductivity-{cfg.example}", conductivity_setup(cfg), cfg, names)
