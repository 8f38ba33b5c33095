import re

import numpy as np
import pandas as pd
import pytest

from app.core.errors import ConfigurationError, SolverFailure
from app.data_import.scenario_loader import bundled_scenario_path, read_scenario
from app.schemas.fit import EvaluationRecord, FitParameter, FitResult, FitSpec, MeasuredCurve
from app.services import back_analysis
from app.services.back_analysis import (
    ParameterSpace,
    ReloadSimulator,
    calibrate,
    candidate_agent,
    curve_misfit,
    evaluation_frame,
    load_measured_curve,
    null_misfit,
    objective,
    prefix_is_reusable,
    synthetic_curve,
    write_fit_report,
)

MM = 1e-3
CMOD = np.linspace(0.0, 0.1 * MM, 21)


def reload_force(agent):
    """Stand-in reload curve proportional to the healed strength."""
    return agent.ultimate_strength * 1e-3 * (1.0 - CMOD / (0.2 * MM))


class AnalyticSimulator:
    """Replaces the finite element reload run with a closed-form curve."""

    fail_above = np.inf
    detach_above = np.inf

    def __init__(self, scenario, free=(), mesh=None, controls=None):
        self.scenario = scenario

    @property
    def base_agent(self):
        return self.scenario.healing

    def prepare(self):
        pass

    def reload_curve(self, agent):
        if agent.ultimate_strength > self.fail_above:
            raise SolverFailure("step cuts exhausted")
        if agent.ultimate_strength > self.detach_above:
            return CMOD + 1.0, reload_force(agent)
        return CMOD, reload_force(agent)


@pytest.fixture
def bending():
    return read_scenario(bundled_scenario_path("bending"))


@pytest.fixture
def measured(bending) -> MeasuredCurve:
    agent = candidate_agent(bending.healing, {"ultimate_strength": 0.7e6})
    return MeasuredCurve(cmod=CMOD.tolist(), force=reload_force(agent).tolist())


@pytest.fixture
def analytic(monkeypatch):
    monkeypatch.setattr(back_analysis, "ReloadSimulator", AnalyticSimulator)
    yield AnalyticSimulator
    AnalyticSimulator.fail_above = np.inf
    AnalyticSimulator.detach_above = np.inf


STRENGTH = [FitParameter(name="ultimate_strength", lower=0.1e6, upper=2.0e6)]


class TestMeasuredCurve:
    def test_reads_mm_and_skips_header_and_comments(self, tmp_path):
        path = tmp_path / "reload.csv"
        rows = "\n".join(f"{c:.3f}, {f:.1f}" for c, f in zip([0.0, 0.01, 0.02, 0.03, 0.04], [0, 50, 90, 120, 140]))
        path.write_text("# specimen 3\ncmod_mm,force_N\n" + rows + "\n")
        curve = load_measured_curve(path)
        assert curve.cmod == pytest.approx([0.0, 1e-5, 2e-5, 3e-5, 4e-5])
        assert curve.force[-1] == 140.0

    @pytest.mark.parametrize("content, message", [
        ("0.1\n0.2\n0.3\n", "two columns"),
        ("0.0,1\n0.1,2\n", "at least 5 samples"),
        ("0.0,1\n0.2,2\n0.1,3\n0.3,4\n0.4,5\n", "strictly increasing"),
    ])
    def test_invalid_curves(self, tmp_path, content, message):
        path = tmp_path / "bad.csv"
        path.write_text(content)
        with pytest.raises(ConfigurationError, match=message):
            load_measured_curve(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_measured_curve(tmp_path / "absent.csv")


class TestMisfit:
    def test_identical_curves(self, measured):
        assert curve_misfit(measured.cmod, measured.force, measured) == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset(self, measured):
        assert curve_misfit(measured.cmod, np.asarray(measured.force) + 3.0, measured) == pytest.approx(3.0)

    def test_only_the_common_range_counts(self, measured):
        half = len(CMOD) // 2
        shorter = curve_misfit(CMOD[:half + 1], np.asarray(measured.force[:half + 1]) + 2.0, measured)
        assert shorter == pytest.approx(2.0)

    def test_unsorted_simulation_is_sorted(self, measured):
        assert curve_misfit(CMOD[::-1], np.asarray(measured.force)[::-1], measured) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_ranges(self, measured):
        with pytest.raises(ConfigurationError, match="does not overlap"):
            curve_misfit([1.0 * MM, 2.0 * MM], [1.0, 2.0], measured)

    def test_single_point_simulation(self, measured):
        with pytest.raises(ConfigurationError, match="fewer than two"):
            curve_misfit([0.0], [1.0], measured)

    def test_null_misfit_is_the_rms_force(self, measured):
        assert null_misfit(measured) == pytest.approx(np.sqrt(np.mean(np.square(measured.force))))


class TestParameterSpace:
    def test_log_mapping(self):
        space = ParameterSpace(STRENGTH)
        assert space.to_params([0.0])["ultimate_strength"] == pytest.approx(0.1e6)
        assert space.to_params([1.0])["ultimate_strength"] == pytest.approx(2.0e6)
        middle = space.to_params([0.5])["ultimate_strength"]
        assert middle == pytest.approx(np.sqrt(0.1e6 * 2.0e6))
        assert space.to_unit({"ultimate_strength": middle}) == pytest.approx([0.5])

    def test_values_are_clipped_to_the_bounds(self):
        space = ParameterSpace(STRENGTH)
        assert space.to_params([1.7])["ultimate_strength"] == pytest.approx(2.0e6)

    def test_grid(self):
        space = ParameterSpace(STRENGTH + [FitParameter(name="healing_rate", lower=0.01, upper=1.0)])
        assert len(space.grid(4)) == 16
        assert [z.tolist() for z in space.grid(1)] == [[0.5, 0.5]]


class TestSimulatorSetup:
    def test_prefix_reuse_depends_on_the_free_parameters(self, bending):
        program = bending.program
        reload = program.reload_phase_index
        assert reload == 3
        assert prefix_is_reusable(program, reload, ["ultimate_strength", "healing_rate"])
        assert not prefix_is_reusable(program, reload, ["release_threshold"])

    def test_candidate_agent_overrides_only_given_values(self, bending):
        agent = candidate_agent(bending.healing, {"healing_rate": 0.5})
        assert agent.healing_rate == 0.5
        assert agent.ultimate_strength == bending.healing.ultimate_strength

    def test_scenario_without_healing_is_rejected(self, bending, measured):
        with pytest.raises(ConfigurationError, match="no \\[healing\\] block"):
            calibrate(FitSpec(free=STRENGTH), bending.without_healing(), measured)

    def test_free_and_fixed_overlap(self, bending, measured):
        spec = FitSpec(free=STRENGTH, fixed={"ultimate_strength": 1e6})
        with pytest.raises(ConfigurationError, match="both free and fixed"):
            calibrate(spec, bending, measured)


class TestCalibration:
    def test_recovers_a_known_strength(self, analytic, bending, measured):
        spec = FitSpec(free=STRENGTH, grid_points=8, max_evaluations=60, restart=False)
        result = calibrate(spec, bending, measured)
        assert result.params["ultimate_strength"] == pytest.approx(0.7e6, rel=1e-2)
        assert result.misfit < 1.0
        assert [r.stage for r in result.evaluations[:8]] == ["grid"] * 8
        assert any(r.stage == "simplex" for r in result.evaluations)

    def test_zero_budget_returns_the_best_grid_point(self, analytic, bending, measured):
        spec = FitSpec(free=STRENGTH, grid_points=5, max_evaluations=0)
        result = calibrate(spec, bending, measured)
        assert len(result.evaluations) == 5
        assert not result.converged
        assert "budget is zero" in result.message
        grid = [r.params["ultimate_strength"] for r in result.evaluations]
        best = min(grid, key=lambda value: abs(value - 0.7e6))
        assert result.params["ultimate_strength"] == pytest.approx(best)

    def test_failed_candidates_get_a_penalty(self, analytic, bending, measured):
        analytic.fail_above = 1.0e6
        spec = FitSpec(free=STRENGTH, grid_points=5, max_evaluations=0)
        result = calibrate(spec, bending, measured)
        failed = [r for r in result.evaluations if r.failed]
        feasible = [r.misfit for r in result.evaluations if not r.failed]
        assert failed
        assert all(r.misfit == pytest.approx(10.0 * max(feasible)) for r in failed)
        assert result.params["ultimate_strength"] <= 1.0e6

    def test_curves_outside_the_measured_range_get_a_penalty(self, analytic, bending, measured):
        analytic.detach_above = 1.0e6
        spec = FitSpec(free=STRENGTH, grid_points=5, max_evaluations=0)
        result = calibrate(spec, bending, measured)
        failed = [r for r in result.evaluations if r.failed]
        feasible = [r.misfit for r in result.evaluations if not r.failed]
        assert failed and all(r.params["ultimate_strength"] > 1.0e6 for r in failed)
        assert all(r.misfit == pytest.approx(10.0 * max(feasible)) for r in failed)

    def test_ensemble_needs_a_scenario_file(self, analytic, bending, measured):
        spec = FitSpec(free=STRENGTH, grid_points=2, max_evaluations=0, ensemble=["curve1"])
        detached = bending.model_copy(update={"source_path": None})
        with pytest.raises(ConfigurationError, match="ensemble"):
            calibrate(spec, detached, measured)

    def test_ensemble_variants_are_averaged(self, analytic, bending, measured):
        spec = FitSpec(free=STRENGTH, grid_points=3, max_evaluations=0, ensemble=["curve1", "curve2"])
        result = calibrate(spec, bending, measured)
        assert len(result.evaluations) == 3


class TestObjective:
    def test_feasible_candidate(self, analytic, bending, measured):
        assert objective({"ultimate_strength": 0.7e6}, bending, measured) == pytest.approx(0.0, abs=1e-9)

    def test_failure_scores_ten_times_the_worst_feasible_misfit(self, analytic, bending, measured):
        analytic.fail_above = 1.0e6
        assert objective({"ultimate_strength": 1.5e6}, bending, measured, feasible=[2.0, 5.0]) == pytest.approx(50.0)

    def test_failure_without_feasible_runs(self, analytic, bending, measured):
        analytic.detach_above = 1.0e6
        value = objective({"ultimate_strength": 1.5e6}, bending, measured)
        assert value == pytest.approx(10.0 * null_misfit(measured))

    def test_explicit_penalty(self, analytic, bending, measured):
        analytic.fail_above = 1.0e6
        assert objective({"ultimate_strength": 1.5e6}, bending, measured, penalty=123.0) == 123.0


class TestReport:
    def test_writes_report_and_log(self, tmp_path):
        result = FitResult(
            params={"ultimate_strength": 0.7e6, "ultimate_fracture_energy": 42.0},
            misfit=1.25,
            converged=False,
            evaluations=[],
            message="refinement budget of 10 evaluations exhausted",
        )
        result.evaluations.append(EvaluationRecord(
            index=0, stage="grid", params=dict(result.params), misfit=1.25))
        report, log = write_fit_report(result, tmp_path, "bending")
        text = report.read_text()
        assert text.startswith("Calibration of bending")
        assert "ultimate_strength" in text and "0.7 MPa" in text
        assert "42 N/m" in text
        assert re.search(r"converged\s+no", text)
        assert "budget of 10 evaluations exhausted" in text
        frame = pd.read_csv(log)
        assert list(frame.columns) == ["index", "stage", "ultimate_strength", "ultimate_fracture_energy",
                                       "misfit_N", "failed"]
        assert evaluation_frame(result).loc[0, "misfit_N"] == 1.25


@pytest.mark.slow
def test_recovers_the_strength_of_a_simulated_twin():
    overrides = ["mesh.columns=11", "mesh.rows=4", "program.1.target=0.2", "program.4.target=0.35"]
    scenario = read_scenario(bundled_scenario_path("bending"), overrides=overrides)
    twin = ReloadSimulator(scenario, ["ultimate_strength"])
    measured = synthetic_curve(twin, {"ultimate_strength": 0.9e6})
    assert objective({"ultimate_strength": 0.9e6}, twin, measured) == pytest.approx(0.0, abs=1e-6)

    spec = FitSpec(free=[FitParameter(name="ultimate_strength", lower=0.2e6, upper=2.0e6)],
                   grid_points=6, max_evaluations=100)
    result = calibrate(spec, scenario, measured)
    assert len(result.evaluations) <= 150
    assert result.params["ultimate_strength"] == pytest.approx(0.9e6, rel=0.05)
