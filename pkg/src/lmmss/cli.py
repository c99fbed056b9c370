"""Batch command line: ``lmmss {solve,perfusion,conductivity,diagnostics}``.

Every command reads one JSON config (``--config``) and writes its outputs
below ``--out`` (default ``out``).  Exit codes: 0 success, 1 a diagnostics
check failed, 2 bad or missing config, 3 numerical failure.  Errors are
also printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import scaling
from .errors import ConfigError, DimensionError, LmmssError
from .experiments import (ConductivityConfig, PerfusionConfig, run_conductivity_campaign,
                          run_perfusion_campaign)
from .gsvd import gsvd_pair, psi, psi_max
from .problems import make_problem
from .solver import (Discrepancy, SolverConfig, gradient_related_check, local_rate_check,
                     solve)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lmmss")


class Command(str, Enum):
    SOLVE = "solve"
    PERFUSION = "perfusion"
    CONDUCTIVITY = "conductivity"
    DIAGNOSTICS = "diagnostics"


class Verbosity(str, Enum):
    QUIET = "quiet"
    NORMAL = "normal"


@dataclass(frozen=True)
class CliConfig:
    command: Command
    config_path: Path
    out_dir: Path
    seed_override: Optional[int] = None
    verbosity: Verbosity = Verbosity.NORMAL


class _Fail(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmmss", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in Command:
        s = sub.add_parser(cmd.value)
        s.add_argument("--config", required=True, type=Path, help="JSON config file")
        s.add_argument("--out", default=Path("out"), type=Path, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the seed(s) in the config")
        s.add_argument("--quiet", action="store_true", help="only print errors")
    return p


def _load(path: Path) -> dict:
    if not path.is_file():
        raise _Fail(EXIT_CONFIG, "config_missing", f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_CONFIG, "config_invalid", f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise _Fail(EXIT_CONFIG, "config_invalid", f"{path}: top level must be an object")
    return data


# ---------------------------------------------------------------------- solve

def _scaling_from(spec, n: int):
    if spec is None:
        return None
    kind = spec.get("kind")
    if kind == "identity":
        return scaling.identity(n)
    if kind in ("first_diff", "second_diff", "third_diff"):
        return scaling.diff_operator(("first_diff", "second_diff", "third_diff").index(kind) + 1, n)
    if kind == "raw":
        return scaling.raw(np.asarray(spec["matrix"], dtype=float))
    raise ConfigError(f"unknown scaling kind {kind!r}")


_SOLVER_KEYS = {"nu", "eta", "vartheta", "eps", "max_iter", "max_backtracks", "step_method"}


def _solver_config(spec: dict) -> SolverConfig:
    spec = dict(spec or {})
    disc = spec.pop("discrepancy", None)
    unknown = set(spec) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    try:
        return SolverConfig(diagnostics=True,
                            discrepancy=Discrepancy(**disc) if disc else None, **spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_solve(cfg: dict, cli: CliConfig) -> int:
    unknown = set(cfg) - {"problem", "problem_args", "x0", "scaling", "solver", "seed"}
    if unknown:
        raise ConfigError(f"unknown solve keys: {sorted(unknown)}")
    if "problem" not in cfg:
        raise ConfigError("solve config needs a 'problem'")
    kwargs = dict(cfg.get("problem_args", {}))
    seed = cli.seed_override if cli.seed_override is not None else cfg.get("seed")
    if seed is not None and cfg["problem"] == "rank_deficient":
        kwargs["seed"] = int(seed)
    case = make_problem(cfg["problem"], **kwargs)
    L = _scaling_from(cfg.get("scaling"), case.problem.n) or case.L
    x0 = np.asarray(cfg.get("x0", case.x0), dtype=float)
    x, trace = solve(case.problem, L, x0, _solver_config(cfg.get("solver")))

    cli.out_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(cli.out_dir / "trace.csv")
    summary = {
        "problem": case.problem.name,
        "stop_reason": trace.stop_reason.value,
        "iterations": trace.iterations,
        "x": [float(v) for v in x],
        "resid_norm": trace.records[-1].resid_norm,
        "gradient_related": gradient_related_check(trace).passed,
    }
    if case.problem.dist is not None:
        summary["dist"] = trace.records[-1].dist
        try:
            summary["max_rate_ratio"] = local_rate_check(trace).max_ratio
        except ValueError:
            pass
    (cli.out_dir / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
    if cli.verbosity is Verbosity.NORMAL:
        print(f"{case.problem.name}: {trace.stop_reason.value} after {trace.iterations} "
              f"iterations, ||F|| = {summary['resid_norm']:.3e}")
    return EXIT_OK


# --------------------------------------------------------------- campaigns

def _campaign(cfg: dict, cli: CliConfig, cls, runner) -> int:
    if cli.seed_override is not None:
        cfg = {**cfg, "seeds": [cli.seed_override]}
    config = cls.from_dict(cfg)
    report = runner(config)
    root = report.write(cli.out_dir)
    if cli.verbosity is Verbosity.NORMAL:
        print(report.format_table())
        print(f"wrote {root}")
    seeds = [s for c in report.cells for s in c.seeds]
    if seeds and all(s.error is not None for s in seeds):
        raise _Fail(EXIT_NUMERIC, "numerical_failure", "every seed failed")
    return EXIT_OK


# ------------------------------------------------------------- diagnostics

def _random_pair(rng, m, n, L):
    while True:
        A = rng.standard_normal((m, n))
        if np.linalg.cond(np.vstack([A, L])) < 1e8:
            return A


def _cmd_diagnostics(cfg: dict, cli: CliConfig) -> int:
    """GSVD invariants on given or random pairs plus the psi bound."""
    unknown = set(cfg) - {"A", "L", "random", "lambdas", "psi_samples", "seed"}
    if unknown:
        raise ConfigError(f"unknown diagnostics keys: {sorted(unknown)}")
    seed = cli.seed_override if cli.seed_override is not None else cfg.get("seed", 0)
    rng = np.random.default_rng(seed)
    pairs = []
    if "A" in cfg:
        A = np.asarray(cfg["A"], dtype=float)
        L = np.asarray(cfg.get("L", np.eye(A.shape[1])), dtype=float)
        pairs.append((A, L))
    rnd = cfg.get("random")
    if rnd:
        m, n, draws = int(rnd.get("m", 8)), int(rnd.get("n", 5)), int(rnd.get("draws", 100))
        spec = rnd.get("L", {"kind": "first_diff"})
        L = np.asarray(_scaling_from(spec, n))
        pairs += [(_random_pair(rng, m, n, L), L) for _ in range(draws)]
    if not pairs:
        raise ConfigError("diagnostics config needs 'A' or 'random'")

    worst = {"reconstruct_A": 0.0, "reconstruct_L": 0.0, "orth_U": 0.0, "orth_V": 0.0,
             "sigma_mu_norm": 0.0, "ordering": 0.0, "XXt_inverse": 0.0}
    for A, L in pairs:
        f = gsvd_pair(A, L)
        ra, rl = f.reconstruct()
        worst["reconstruct_A"] = max(worst["reconstruct_A"], np.linalg.norm(ra - A) / np.linalg.norm(A))
        worst["reconstruct_L"] = max(worst["reconstruct_L"], np.linalg.norm(rl - L) / np.linalg.norm(L))
        worst["orth_U"] = max(worst["orth_U"], np.abs(f.U.T @ f.U - np.eye(f.U.shape[1])).max())
        worst["orth_V"] = max(worst["orth_V"], np.abs(f.V.T @ f.V - np.eye(f.V.shape[1])).max())
        worst["sigma_mu_norm"] = max(worst["sigma_mu_norm"], np.abs(f.sigma**2 + f.mu**2 - 1).max())
        order = max(np.max(-np.diff(f.sigma), initial=0.0), np.max(np.diff(f.mu), initial=0.0))
        worst["ordering"] = max(worst["ordering"], order)
        inv = np.linalg.inv(A.T @ A + L.T @ L)
        worst["XXt_inverse"] = max(worst["XXt_inverse"],
                                   np.linalg.norm(f.X @ f.X.T - inv) / np.linalg.norm(inv))
    tol = {"XXt_inverse": 1e-8}

    # psi(gamma, lam) <= sup over gamma, on random pairs plus the listed lambdas
    n_psi = int(cfg.get("psi_samples", 10_000))
    lam = np.concatenate([rng.uniform(1e-3, 2.0, n_psi),
                          np.asarray(cfg.get("lambdas", []), dtype=float)])
    g = rng.uniform(0.0, 10.0, lam.size) ** 2
    sup = np.array([psi_max(v).value for v in lam])
    worst["psi_bound"] = max(float(np.max(psi(g, lam) - sup, initial=0.0)), 0.0)

    failed = False
    lines = [f"{'check':<15} {'worst':>11}  result", "-" * 34]
    for name, value in worst.items():
        ok = value <= tol.get(name, 1e-10)
        failed |= not ok
        lines.append(f"{name:<15} {value:11.3e}  {'PASS' if ok else 'FAIL'}")
    cli.out_dir.mkdir(parents=True, exist_ok=True)
    (cli.out_dir / "diagnostics.json").write_text(
        json.dumps({"pairs": len(pairs), "worst": worst, "passed": not failed}, indent=2) + "\n")
    if cli.verbosity is Verbosity.NORMAL or failed:
        print("\n".join(lines))
    return EXIT_CHECK_FAILED if failed else EXIT_OK


_HANDLERS = {
    Command.SOLVE: _cmd_solve,
    Command.PERFUSION: lambda c, k: _campaign(c, k, PerfusionConfig, run_perfusion_campaign),
    Command.CONDUCTIVITY: lambda c, k: _campaign(c, k, ConductivityConfig, run_conductivity_campaign),
    Command.DIAGNOSTICS: _cmd_diagnostics,
}


def _report(fail: _Fail) -> int:
    print(json.dumps({"error": fail.kind, "message": fail.message, "exit_code": fail.code}),
          file=sys.stderr)
    return fail.code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the bad-config code
        return int(exc.code or 0)
    cli = CliConfig(command=Command(args.command), config_path=args.config, out_dir=args.out,
                    seed_override=args.seed,
                    verbosity=Verbosity.QUIET if args.quiet else Verbosity.NORMAL)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(cli.config_path)
        return _HANDLERS[cli.command](cfg, cli)
    except _Fail as fail:
        return _report(fail)
    except (ConfigError, DimensionError) as exc:
        return _report(_Fail(EXIT_CONFIG, "config_invalid", str(exc)))
    except (LmmssError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _report(_Fail(EXIT_NUMERIC, "numerical_failure", f"{type(exc).__name__}: {exc}"))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
