"""
Back analysis of healing parameters from a measured reload curve.

The misfit is the RMS force difference between the simulated reload phase and
the measured force-CMOD samples over their common CMOD range. The search runs a
log-spaced grid over the free parameters and refines the best grid point with a
bounded Nelder-Mead simplex in normalized log coordinates, followed by one
restart from a perturbed optimum.
"""
import copy
import itertools
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError
from scipy.optimize import minimize

from app.core.config import SolverControls
from app.core.errors import ConfigurationError, HealFracError, SolverFailure
from app.data_import.scenario_loader import build_analysis, read_scenario
from app.models import CrackPath, GlobalState, Mesh
from app.schemas.fit import EvaluationRecord, FitParameter, FitResult, FitSpec, MeasuredCurve
from app.schemas.material import HealingAgent
from app.schemas.program import LoadProgram
from app.schemas.scenario import ScenarioFile
from app.services.continuation import Analysis, run_program

logger = logging.getLogger(__name__)

MM = 1e-3
PENALTY_FACTOR = 10.0

# Parameters that act only once a released point heals; a run prefix whose load
# steps take no time is independent of them.
MATURING_PARAMETERS = {"ultimate_strength", "ultimate_fracture_energy", "healing_rate"}


# ============================================================================
# MEASURED DATA
# ============================================================================

def load_measured_curve(path: Union[str, Path]) -> MeasuredCurve:
    """
    Two-column CSV of CMOD (mm) and force (N); a header row and '#' comments are skipped.

    Raises:
        ConfigurationError: missing file, fewer than two columns or an invalid curve
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"measured curve not found: {path}")
    frame = pd.read_csv(path, header=None, comment="#", skipinitialspace=True)
    if frame.shape[1] < 2:
        raise ConfigurationError(f"{path.name}: expected two columns (CMOD mm, force N)")
    frame = frame.iloc[:, :2].apply(pd.to_numeric, errors="coerce").dropna()
    try:
        curve = MeasuredCurve(cmod=(frame.iloc[:, 0] * MM).tolist(), force=frame.iloc[:, 1].tolist())
    except ValidationError as exc:
        raise ConfigurationError(f"{path.name}: {exc.errors()[0]['msg']}") from exc
    logger.info(f"Measured curve {path.name}: {len(curve.cmod)} samples up to "
                f"CMOD {curve.cmod[-1] / MM:.4g} mm")
    return curve


def curve_misfit(cmod: Sequence[float], force: Sequence[float], measured: MeasuredCurve) -> float:
    """
    RMS force difference (N) at the measured samples inside the common CMOD range.

    Raises:
        ConfigurationError: the simulated and measured CMOD ranges do not overlap
    """
    cmod, force = np.asarray(cmod, dtype=float), np.asarray(force, dtype=float)
    samples = np.asarray(measured.cmod)
    if cmod.size < 2:
        raise ConfigurationError("simulated reload curve has fewer than two points")
    order = np.argsort(cmod, kind="stable")
    cmod, force = cmod[order], force[order]
    lower, upper = max(cmod[0], samples[0]), min(cmod[-1], samples[-1])
    inside = (samples >= lower) & (samples <= upper)
    if not lower < upper or not inside.any():
        raise ConfigurationError(
            f"simulated CMOD range [{cmod[0] / MM:.4g}, {cmod[-1] / MM:.4g}] mm does not overlap "
            f"the measured range [{samples[0] / MM:.4g}, {samples[-1] / MM:.4g}] mm"
        )
    simulated = np.interp(samples[inside], cmod, force)
    return float(np.sqrt(np.mean((simulated - np.asarray(measured.force)[inside]) ** 2)))


def null_misfit(measured: MeasuredCurve) -> float:
    """Misfit of a curve that carries no force, the reference for failed runs without feasible ones."""
    return curve_misfit(measured.cmod, np.zeros(len(measured.cmod)), measured)


# ============================================================================
# SIMULATOR
# ============================================================================

def candidate_agent(base: HealingAgent, params: Dict[str, float]) -> HealingAgent:
    return base.model_copy(update={name: float(value) for name, value in params.items()})


def prefix_is_reusable(program: LoadProgram, reload_index: int, free: Sequence[str]) -> bool:
    """True when the phases before the reload do not depend on the free parameters."""
    if not set(free) <= MATURING_PARAMETERS:
        return False
    return all(phase.is_rest or phase.step_time == 0.0 for phase in program.phases[:reload_index])


class ReloadSimulator:
    """
    Runs a scenario with candidate healing parameters and returns its reload curve.

    When the phases before the reload do not depend on the free parameters they
    are run once with the baseline agent and every candidate starts from that
    checkpoint.
    """

    def __init__(
        self,
        scenario: ScenarioFile,
        free: Sequence[str] = (),
        mesh: Optional[Mesh] = None,
        controls: Optional[SolverControls] = None,
    ):
        if scenario.healing is None:
            raise ConfigurationError(f"scenario '{scenario.name}' has no [healing] block to calibrate")
        self.scenario = scenario
        self.analysis: Analysis = build_analysis(scenario, mesh, controls)
        self.program = scenario.program
        self.reload_index = self.program.reload_phase_index
        self.reuse_prefix = self.reload_index > 0 and prefix_is_reusable(self.program, self.reload_index, free)
        self._checkpoint: Optional[Tuple[GlobalState, CrackPath]] = None

    @property
    def base_agent(self) -> HealingAgent:
        return self.scenario.healing

    def prepare(self) -> None:
        """Run the phases before the reload once (no-op without checkpoint reuse)."""
        if not self.reuse_prefix or self._checkpoint is not None:
            return
        result = run_program(self.program, self.analysis, end_phase=self.reload_index)
        if not result.history.complete:
            raise SolverFailure(f"phases before the reload of '{self.scenario.name}' failed: "
                                f"{result.history.failure}", result.diagnostics)
        self._checkpoint = (result.state, self.analysis.engine.snapshot())
        logger.info(f"Checkpoint of '{self.scenario.name}' before phase {self.reload_index} "
                    f"at t={result.state.time:.4g} h")

    def _candidate(self, agent: HealingAgent) -> Analysis:
        model = copy.copy(self.analysis.model)
        model.agent = agent
        engine = copy.deepcopy(self.analysis.engine)
        return Analysis(name=self.analysis.name, model=model, engine=engine, program=self.program)

    def reload_curve(self, agent: HealingAgent) -> Tuple[np.ndarray, np.ndarray]:
        """
        (CMOD m, force N) of the reload phase for one agent.

        Raises:
            SolverFailure: the run stopped before the end of the reload phase
        """
        analysis = self._candidate(agent)
        if self.reuse_prefix:
            self.prepare()
            state, path = self._checkpoint
            analysis.engine.restore(copy.deepcopy(path))
            result = run_program(self.program, analysis, state=state.copy(),
                                 start_phase=self.reload_index, end_phase=self.reload_index + 1)
        else:
            result = run_program(self.program, analysis, end_phase=self.reload_index + 1)
        if not result.history.complete:
            raise SolverFailure(result.history.failure or "run incomplete", result.diagnostics)
        cmod, force = result.history.curve(self.reload_index)
        return np.asarray(cmod), np.asarray(force)


def synthetic_curve(simulator: ReloadSimulator, params: Dict[str, float]) -> MeasuredCurve:
    """Reload curve simulated at known parameters, usable as a measured curve."""
    cmod, force = simulator.reload_curve(candidate_agent(simulator.base_agent, params))
    keep = np.concatenate(([True], np.diff(cmod) > 0))
    return MeasuredCurve(cmod=cmod[keep].tolist(), force=force[keep].tolist())


# ============================================================================
# OBJECTIVE
# ============================================================================

def _misfit(simulators: Sequence[ReloadSimulator], params: Dict[str, float], measured: MeasuredCurve) -> Optional[float]:
    """Mean misfit over the simulators, None when a run fails or its curve cannot be compared."""
    values = []
    for simulator in simulators:
        try:
            cmod, force = simulator.reload_curve(candidate_agent(simulator.base_agent, params))
            values.append(curve_misfit(cmod, force, measured))
        except (HealFracError, ValidationError, ValueError) as exc:
            logger.info(f"candidate {params} failed on '{simulator.scenario.name}': {exc}")
            return None
    return float(np.mean(values))


def objective(
    params: Dict[str, float],
    scenario: Union[ScenarioFile, ReloadSimulator],
    measured: MeasuredCurve,
    penalty: Optional[float] = None,
    feasible: Sequence[float] = (),
) -> float:
    """
    Misfit (N) of one parameter set.

    A failed run returns `penalty`; without one it scores 10 times the worst of
    the `feasible` misfits seen so far, or 10 times the misfit of a zero-force
    curve when there are none.
    """
    simulator = scenario if isinstance(scenario, ReloadSimulator) else ReloadSimulator(scenario, list(params))
    value = _misfit([simulator], params, measured)
    if value is None:
        return penalty if penalty is not None else failure_penalty(feasible, measured)
    return value


def failure_penalty(feasible: Sequence[float], measured: MeasuredCurve) -> float:
    worst = max(feasible, default=0.0)
    return PENALTY_FACTOR * (worst if worst > 0.0 else null_misfit(measured))


# ============================================================================
# CALIBRATION
# ============================================================================

class ParameterSpace:
    """Maps the free parameters to the unit cube through their log bounds."""

    def __init__(self, free: Sequence[FitParameter]):
        self.names = [p.name for p in free]
        self.log_lower = np.log([p.lower for p in free])
        self.log_span = np.log([p.upper for p in free]) - self.log_lower

    def to_params(self, z: Sequence[float]) -> Dict[str, float]:
        z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        values = np.exp(self.log_lower + z * self.log_span)
        return {name: float(v) for name, v in zip(self.names, values)}

    def to_unit(self, params: Dict[str, float]) -> np.ndarray:
        values = np.log([params[name] for name in self.names])
        return (values - self.log_lower) / self.log_span

    def grid(self, points: int) -> List[np.ndarray]:
        axis = np.linspace(0.0, 1.0, points) if points > 1 else np.array([0.5])
        return [np.array(z) for z in itertools.product(axis, repeat=len(self.names))]


def _grid_task(simulators: Sequence[ReloadSimulator], params: Dict[str, float], measured: MeasuredCurve) -> Optional[float]:
    return _misfit(simulators, params, measured)


class _Search:
    """Evaluation log and failure penalty shared by the search stages."""

    def __init__(self, space: ParameterSpace, fixed: Dict[str, float], simulators: Sequence[ReloadSimulator],
                 measured: MeasuredCurve):
        self.space = space
        self.fixed = fixed
        self.simulators = simulators
        self.measured = measured
        self.records: List[EvaluationRecord] = []

    def params(self, z: Sequence[float]) -> Dict[str, float]:
        return {**self.fixed, **self.space.to_params(z)}

    @property
    def penalty(self) -> float:
        return failure_penalty([r.misfit for r in self.records if not r.failed], self.measured)

    def record(self, stage: str, params: Dict[str, float], value: Optional[float],
               penalty: Optional[float] = None) -> float:
        failed = value is None
        misfit = (penalty if penalty is not None else self.penalty) if failed else value
        self.records.append(EvaluationRecord(index=len(self.records), stage=stage, params=params,
                                             misfit=misfit, failed=failed))
        return misfit

    def evaluate(self, stage: str, z: Sequence[float]) -> float:
        params = self.params(z)
        return self.record(stage, params, _misfit(self.simulators, params, self.measured))

    def best(self) -> EvaluationRecord:
        feasible = [r for r in self.records if not r.failed] or self.records
        return min(feasible, key=lambda r: (r.misfit, r.index))


def _grid_stage(search: _Search, spec: FitSpec) -> None:
    points = search.space.grid(spec.grid_points)
    if len(points) > 1000:
        logger.warning(f"calibration grid has {len(points)} points")
    candidates = [search.params(z) for z in points]
    if spec.n_jobs != 1 and len(candidates) > 1:
        values = Parallel(n_jobs=spec.n_jobs)(
            delayed(_grid_task)(search.simulators, params, search.measured) for params in candidates
        )
    else:
        values = [_grid_task(search.simulators, params, search.measured) for params in candidates]
    # one penalty for the whole grid so it does not depend on scheduling
    penalty = failure_penalty([v for v in values if v is not None], search.measured)
    for params, value in zip(candidates, values):
        search.record("grid", params, value, penalty)
    best = search.best()
    logger.info(f"Grid of {len(candidates)} points: best misfit {best.misfit:.6g} N at {best.params}")


def _simplex_stage(search: _Search, stage: str, start: np.ndarray, budget: int) -> Tuple[bool, int]:
    """Bounded Nelder-Mead from `start`; returns (converged, evaluations used)."""
    if budget <= 0:
        return False, 0
    before = len(search.records)
    dimension = len(start)
    result = minimize(
        lambda z: search.evaluate(stage, z),
        start,
        method="Nelder-Mead",
        bounds=[(0.0, 1.0)] * dimension,
        options={"maxfev": budget, "xatol": 1e-4, "fatol": 1e-6, "initial_simplex": _initial_simplex(start)},
    )
    used = len(search.records) - before
    logger.info(f"{stage}: {used} evaluations, misfit {result.fun:.6g} N ({result.message})")
    return bool(result.success), used


def _initial_simplex(start: np.ndarray, size: float = 0.1) -> np.ndarray:
    vertices = [start]
    for k in range(len(start)):
        vertex = start.copy()
        vertex[k] = vertex[k] + size if vertex[k] + size <= 1.0 else vertex[k] - size
        vertices.append(vertex)
    return np.array(vertices)


def _restart_point(best: np.ndarray, perturbation: float) -> np.ndarray:
    point = best + perturbation
    return np.where(point > 1.0, best - perturbation, point).clip(0.0, 1.0)


def calibrate(
    spec: FitSpec,
    scenario: ScenarioFile,
    measured: MeasuredCurve,
    mesh: Optional[Mesh] = None,
    controls: Optional[SolverControls] = None,
    ensemble: Optional[Sequence[ScenarioFile]] = None,
) -> FitResult:
    """
    Calibrate the free healing parameters of a scenario against a measured reload curve.

    Args:
        spec: Free parameters with bounds, fixed values and search budget
        scenario: Scenario whose [healing] block supplies the parameters that are not fitted
        measured: Measured reload curve (SI)
        mesh: Mesh to use instead of loading the scenario's own
        controls: Solver controls
        ensemble: Further scenarios (e.g. other crack paths) whose misfits are averaged in;
            resolved from `spec.ensemble` variants of the scenario file when not given

    Returns:
        FitResult with the best parameters, their misfit and the full evaluation log;
        `converged` is False when the refinement budget ran out
    """
    free = [p.name for p in spec.free]
    overlap = set(free) & set(spec.fixed)
    if overlap:
        raise ConfigurationError(f"parameters both free and fixed: {', '.join(sorted(overlap))}")
    if scenario.healing is None:
        raise ConfigurationError(f"scenario '{scenario.name}' has no [healing] block to calibrate")

    scenarios = [scenario.with_healing(candidate_agent(scenario.healing, spec.fixed))]
    if ensemble is None and spec.ensemble:
        ensemble = _ensemble_scenarios(scenario, spec.ensemble)
    for member in ensemble or []:
        base = member.healing or scenario.healing
        scenarios.append(member.with_healing(candidate_agent(base, spec.fixed)))

    simulators = [ReloadSimulator(s, free, mesh if k == 0 else None, controls) for k, s in enumerate(scenarios)]
    for simulator in simulators:
        simulator.prepare()

    space = ParameterSpace(spec.free)
    search = _Search(space, dict(spec.fixed), simulators, measured)
    logger.info(f"Calibrating {', '.join(free)} of '{scenario.name}' on {len(simulators)} scenario(s)")

    _grid_stage(search, spec)
    best_grid = search.best()
    budget = spec.max_evaluations
    converged, used = _simplex_stage(search, "simplex", space.to_unit(best_grid.params), budget)
    message = None
    if spec.restart and budget - used > 0:
        restart = _restart_point(space.to_unit(search.best().params), spec.restart_perturbation)
        restarted, extra = _simplex_stage(search, "restart", restart, budget - used)
        converged = converged or restarted
        used += extra
    if budget == 0:
        message = "refinement budget is zero; best grid point returned"
    elif not converged:
        message = f"refinement budget of {budget} evaluations exhausted"
        logger.warning(f"Calibration of '{scenario.name}' did not converge: {message}")

    best = search.best()
    params = {name: best.params[name] for name in free}
    logger.info(f"Calibration result {params}: misfit {best.misfit:.6g} N after {len(search.records)} evaluations")
    return FitResult(params=params, misfit=best.misfit, converged=converged, evaluations=search.records, message=message)


def _ensemble_scenarios(scenario: ScenarioFile, variants: Sequence[str]) -> List[ScenarioFile]:
    if scenario.source_path is None:
        raise ConfigurationError("ensemble variants need a scenario read from a file")
    try:
        return [read_scenario(scenario.source_path, variant=name) for name in variants]
    except HealFracError as exc:
        raise ConfigurationError(f"ensemble variant: {exc}") from exc


# ============================================================================
# REPORT
# ============================================================================

def evaluation_frame(result: FitResult) -> pd.DataFrame:
    rows = [{"index": r.index, "stage": r.stage, **r.params, "misfit_N": r.misfit, "failed": r.failed}
            for r in result.evaluations]
    return pd.DataFrame(rows)


def write_fit_report(result: FitResult, directory: Union[str, Path], scenario: str = "") -> List[Path]:
    """`fit_report.txt` with the calibrated values and `fit_evaluations.csv` with the log."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    log_path = directory / "fit_evaluations.csv"
    evaluation_frame(result).to_csv(log_path, index=False, float_format="%.10e")

    units = {"ultimate_strength": (1e6, "MPa"), "release_threshold": (1e6, "MPa"),
             "ultimate_fracture_energy": (1.0, "N/m"), "healing_rate": (1.0, "1/h"),
             "contact_exponent": (1.0, "")}
    lines = [f"Calibration of {scenario}".rstrip(), ""]
    for name, value in result.params.items():
        scale, unit = units[name]
        lines.append(f"{name:26s} {value / scale:.6g} {unit}".rstrip())
    lines.append(f"{'misfit':26s} {result.misfit:.6g} N")
    lines.append(f"{'evaluations':26s} {len(result.evaluations)}")
    lines.append(f"{'converged':26s} {'yes' if result.converged else 'no'}")
    if result.message:
        lines.append(result.message)
    report_path = directory / "fit_report.txt"
    report_path.write_text("\n".join(lines) + "\n")
    return [report_path, log_path]
