import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmmss.errors import ConfigError, DomainError
from lmmss.experiments import (ConductivityConfig, PerfusionConfig, add_noise,
                               blockwise_relative_error, check_discrepancy_stop,
                               discrepancy_index, discrepancy_stop, relative_error,
                               run_conductivity_campaign, run_perfusion_campaign,
                               temperature_reconstruction_error)
from lmmss.problems import make_problem
from lmmss.solver import Discrepancy, SolverConfig, StopReason, solve

SMALL_PERFUSION = dict(n=8, sensors=[5, 5], n_obs=4, substeps=5, seeds=[0, 1],
                       noise_levels=[1e-3], operators=["I", "L2"], max_iter=40)
SMALL_CONDUCTIVITY = dict(example="isotropic", n=6, n_obs=4, substeps=4, seeds=[0, 1],
                          noise_levels=[0.0, 1e-2], operators=["I", "L1"], max_iter=40)


# -------------------------------------------------------------------- noise

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 1.0))
def test_noise_level_is_exact(seed, NL):
    clean = np.random.default_rng(seed).uniform(-2, 2, 37)
    s = add_noise(clean, NL, seed)
    assert s.noise_norm / np.linalg.norm(clean) == pytest.approx(NL, rel=1e-12)
    np.testing.assert_allclose(s.noisy - s.e, clean, atol=1e-15)


def test_noise_deterministic_per_seed():
    clean = np.linspace(1, 2, 20)
    a, b, c = add_noise(clean, 1e-2, 4), add_noise(clean, 1e-2, 4), add_noise(clean, 1e-2, 5)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    assert not np.array_equal(a.noisy, c.noisy)


def test_zero_noise_and_bad_inputs():
    clean = np.ones(5)
    s = add_noise(clean, 0.0, 0)
    np.testing.assert_array_equal(s.noisy, clean)
    assert s.noise_norm == 0.0
    with pytest.raises(DomainError):
        add_noise(np.zeros(4), 1e-3, 0)
    with pytest.raises(DomainError):
        add_noise(clean, -1e-3, 0)
    with pytest.raises(DomainError):
        add_noise(clean, float("nan"), 0)


# ----------------------------------------------------------- discrepancy rule

def test_discrepancy_boundary():
    assert discrepancy_stop(1.05, 1.05, 1.0)
    assert not discrepancy_stop(1.0500001, 1.05, 1.0)
    assert discrepancy_stop(0.0, 1.0, 0.0)


def test_discrepancy_index_matches_solver_stop():
    case = make_problem("rank_deficient", seed=2)
    noise = 2e-3
    _, trace = solve(case.problem, case.L, case.x0,
                     SolverConfig(eps=0.0, discrepancy=Discrepancy(1.1, noise)))
    assert check_discrepancy_stop(trace, 1.1, noise)
    assert discrepancy_index(trace, 1.1, noise) == trace.iterations
    # an unrelated trace that never used the rule is not a discrepancy stop
    _, plain = solve(case.problem, case.L, case.x0, SolverConfig(eps=1e-8))
    assert not check_discrepancy_stop(plain, 1.1, noise)
    assert discrepancy_index(plain, 1.1, 1e-30) is None


# ------------------------------------------------------------------ metrics

def test_relative_error_cases():
    assert relative_error([1.0, 1.0], [1.0, 1.0]) == 0.0
    assert relative_error([2.0, 0.0], [1.0, 0.0]) == 1.0
    assert relative_error([5.0, 1.0], [0.0, 1.0], mask=[False, True]) == 0.0
    with pytest.raises(DomainError):
        relative_error([1.0], [0.0])
    with pytest.raises(ValueError):
        relative_error([1.0, 2.0], [1.0])
    assert temperature_reconstruction_error([3.0, 4.0], [3.0, 4.0]) == 0.0


def test_blockwise_relative_error():
    exact = np.array([1.0, 1.0, 2.0, 2.0])
    est = np.array([1.0, 1.0, 2.0, 0.0])
    assert blockwise_relative_error(est, exact, 2) == pytest.approx((0.0, 2.0 / np.sqrt(8)))
    with pytest.raises(ValueError):
        blockwise_relative_error(np.ones(5), np.ones(5), 2)


# ------------------------------------------------------------------ configs

def test_config_roundtrip_and_validation():
    cfg = PerfusionConfig.from_dict(SMALL_PERFUSION)
    assert PerfusionConfig.from_dict(cfg.to_dict()) == cfg
    json.dumps(cfg.to_dict())
    with pytest.raises(ConfigError):
        PerfusionConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        PerfusionConfig(operators=("L4",))
    with pytest.raises(ConfigError):
        ConductivityConfig(example="anisotropic")
    with pytest.raises(ConfigError):
        ConductivityConfig(tau=0.5)
    with pytest.raises(ConfigError):
        ConductivityConfig(noise_levels=(-1e-3,))
    with pytest.raises(ConfigError):
        ConductivityConfig(operators=("L3",))


# ---------------------------------------------------------------- campaigns

@pytest.fixture(scope="module")
def perfusion_report():
    return run_perfusion_campaign(SMALL_PERFUSION)


def test_perfusion_campaign_smoke(perfusion_report):
    rep = perfusion_report
    assert rep.campaign == "perfusion"
    assert [c.name for c in rep.cells] == ["nl0.001_I", "nl0.001_L2"]
    for c in rep.cells:
        assert len(c.seeds) == 2 and not c.failed
        for s in c.seeds:
            assert s.stop_reason is StopReason.DISCREPANCY
            assert check_discrepancy_stop(s.trace, 1.05, s.noise_norm)
            assert s.re_history.shape == (s.iterations + 1,)
            assert s.re_history[-1] == pytest.approx(s.re[0])
        assert 0 < c.mean_re[0] < 1.5
        assert c.max_iterations == max(s.iterations for s in c.seeds)


def test_perfusion_campaign_is_deterministic(perfusion_report):
    again = run_perfusion_campaign(SMALL_PERFUSION)
    assert again.to_csv() == perfusion_report.to_csv()
    threaded = run_perfusion_campaign(dict(SMALL_PERFUSION, workers=2))
    assert threaded.to_csv() == perfusion_report.to_csv()


def test_report_layout(perfusion_report, tmp_path):
    root = perfusion_report.write(tmp_path)
    assert root == tmp_path / "perfusion"
    rows = list(csv.DictReader((root / "report.csv").open()))
    assert [r["L"] for r in rows] == ["I", "L2"]
    assert set(rows[0]) >= {"NL", "L", "RE_p", "TRE", "MI", "failed"}
    cfg = json.loads((root / "config.json").read_text())
    assert cfg["n"] == 8 and cfg["sensors"] == [5, 5]
    trace = list(csv.DictReader((root / "nl0.001_L2" / "0.csv").open()))
    assert "re" in trace[0] and "resid_norm" in trace[0]
    assert "RE(p)=" in perfusion_report.format_table()


def test_conductivity_campaign_smoke():
    rep = run_conductivity_campaign(SMALL_CONDUCTIVITY)
    assert rep.campaign == "conductivity-isotropic"
    clean = rep.cell(0.0, "L1")
    for s in clean.seeds:
        assert s.stop_reason in (StopReason.SMALL_GRADIENT, StopReason.SMALL_STEP)
    # zero noise: every seed sees the same data and gives the same answer
    assert clean.seeds[0].re == clean.seeds[1].re
    noisy = rep.cell(1e-2, "I")
    assert all(s.stop_reason is StopReason.DISCREPANCY for s in noisy.seeds)
    with pytest.raises(KeyError):
        rep.cell(0.5, "I")


def test_orthotropic_campaign_reports_two_blocks():
    rep = run_conductivity_campaign(dict(SMALL_CONDUCTIVITY, example="orthotropic",
                                         noise_levels=[0.0], seeds=[0], operators=["L1"]))
    row = rep.rows()[0]
    assert "RE_k11" in row and "RE_k22" in row
    assert len(rep.cells[0].mean_re) == 2


def test_no_stop_runs_to_max_iter():
    rep = run_perfusion_campaign(dict(SMALL_PERFUSION, no_stop=True, max_iter=6, seeds=[0],
                                      operators=["L2"]))
    s = rep.cells[0].seeds[0]
    assert s.iterations == 6 and s.stop_reason is StopReason.MAX_ITER
    assert rep.cells[0].max_iterations == 0 and len(rep.cells[0].failed) == 1
