"""
Load programs: force, displacement and CMOD controlled phases, rest phases,
step cutting and the time bookkeeping that drives healing.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import GeometryError, SolverFailure, StepCutRequest
from app.models import CohesiveState, CrackPath, CrackSegment, GlobalState
from app.schemas.history import HistoryRow, ReleaseRecord, RunHistory
from app.schemas.program import ControlMode, ControlSpec, LoadProgram, StopKind
from app.services import material_law
from app.services.crack_engine import CrackEngine
from app.services.fem_core import StepIncrement, StepResult, StructuralModel, newton_step

logger = logging.getLogger(__name__)

RowCallback = Callable[[HistoryRow], None]


@dataclass
class Analysis:
    """Everything one run needs: model, crack engine and load program."""
    name: str
    model: StructuralModel
    engine: CrackEngine
    program: LoadProgram


@dataclass
class RunResult:
    history: RunHistory
    state: GlobalState
    diagnostics: Optional[Dict] = None


def initial_state(model: StructuralModel) -> GlobalState:
    return GlobalState(
        u=np.zeros(model.dofs.n_dofs),
        load_factors={name: 0.0 for name in sorted(model.patterns)},
    )


def with_segment(state: GlobalState, segment: CrackSegment, tensile_strength: float) -> GlobalState:
    """Copy of a state with a freshly embedded, virgin cohesive point."""
    updated = state.copy()
    updated.segments[segment.element_id] = segment
    updated.cohesive[segment.element_id] = CohesiveState.virgin(tensile_strength, time=state.time)
    return updated


# ============================================================================
# CONTROLLED QUANTITIES
# ============================================================================

def controlled_value(model: StructuralModel, state: GlobalState, phase: ControlSpec) -> float:
    """Pattern force (N) under force control, the monitored displacement (m) otherwise."""
    if phase.mode == ControlMode.FORCE or phase.is_rest:
        return model.pattern_force(phase.pattern, state.load_factors)
    return float(model.control_vector(phase.mode, phase.monitor) @ state.u)


def history_row(model: StructuralModel, state: GlobalState, phase: ControlSpec, phase_index: int) -> HistoryRow:
    return HistoryRow(
        step=state.step,
        time_h=state.time,
        load_factor=state.load_factors.get(phase.pattern, 0.0),
        reaction=model.pattern_force(phase.pattern, state.load_factors),
        cmod=model.cmod(state.u),
        control=controlled_value(model, state, phase),
        phase=phase_index,
    )


def _next_increment(model: StructuralModel, state: GlobalState, phase: ControlSpec, steps_done: int) -> Optional[float]:
    """Increment of the controlled quantity for the next step, or None when the phase is over."""
    increment = phase.increment
    current = controlled_value(model, state, phase)
    if phase.stop == StopKind.STEPS:
        return increment if steps_done < phase.steps else None
    if phase.stop == StopKind.REACH_CMOD:
        return increment if model.cmod(state.u) < phase.target else None
    if phase.stop == StopKind.ZERO_LOAD and phase.mode != ControlMode.FORCE:
        return increment if state.load_factors.get(phase.pattern, 0.0) > 0.0 else None
    target = 0.0 if phase.stop == StopKind.ZERO_LOAD else phase.target
    remaining = target - current
    slack = 1e-9 * max(abs(target), abs(increment))
    if remaining * math.copysign(1.0, increment) <= slack:
        return None
    return math.copysign(min(abs(increment), abs(remaining)), increment)


# ============================================================================
# STEPS
# ============================================================================

def rest_step(state: GlobalState, step_time: float) -> GlobalState:
    """Advance time only: displacements and load factors stay, healing matures."""
    rested = state.copy()
    rested.time = state.time + step_time
    rested.step = state.step + 1
    rested.cohesive = {e: s.evolve(time=rested.time) for e, s in state.cohesive.items()}
    return rested


def _step_increment(model: StructuralModel, state: GlobalState, phase: ControlSpec, delta: float, time: float) -> StepIncrement:
    if phase.mode == ControlMode.FORCE:
        pattern = model.patterns[phase.pattern]
        factor = state.load_factors.get(phase.pattern, 0.0) + delta / pattern.magnitude
        return StepIncrement(pattern=phase.pattern, mode=phase.mode, time=time, load_factor=factor)
    control = model.control_vector(phase.mode, phase.monitor)
    return StepIncrement(pattern=phase.pattern, mode=phase.mode, time=time,
                         control=control, target=float(control @ state.u) + delta)


def solve_with_cracks(analysis: Analysis, start: GlobalState, phase: ControlSpec, delta: float, step_time: float) -> StepResult:
    """
    One converged step, re-solved after each crack segment it triggers.

    Raises:
        StepCutRequest: the step (or one of its re-solves) failed or a new segment could not be
            embedded; the crack path is restored
    """
    model, engine = analysis.model, analysis.engine
    time = start.time + step_time
    snapshot = engine.snapshot()
    trial = start
    limit = model.controls.max_crack_updates_per_step
    try:
        for update in range(limit + 1):
            result = newton_step(model, trial, _step_increment(model, trial, phase, delta, time))
            if update == limit:
                logger.warning(f"crack update limit of {limit} reached at step {result.state.step}")
                break
            u = result.state.u
            segment = engine.update(result.state, result.stresses,
                                    lambda element, point: model.point_stress(element, point, u))
            if segment is None:
                break
            trial = with_segment(trial, segment, model.material.tensile_strength)
    except StepCutRequest:
        engine.restore(snapshot)
        raise
    except GeometryError as exc:
        engine.restore(snapshot)
        raise StepCutRequest(f"crack update failed: {exc}") from exc
    return result


def advance(analysis: Analysis, state: GlobalState, phase: ControlSpec, delta: float,
            phase_index: int, on_row: Optional[RowCallback] = None) -> Tuple[GlobalState, List[HistoryRow]]:
    """
    Apply one increment, halving it (and its time) on failure.

    Raises:
        SolverFailure: step cuts exhausted
    """
    controls = analysis.model.controls
    rows = []
    remaining, fraction, cuts = 1.0, 1.0, 0
    while remaining > 1e-12:
        share = min(fraction, remaining)
        try:
            result = solve_with_cracks(analysis, state, phase, delta * share, phase.step_time * share)
        except StepCutRequest as exc:
            cuts += 1
            if cuts > controls.max_step_cuts:
                raise SolverFailure(
                    f"step {state.step + 1} of phase '{phase.name}' failed after {controls.max_step_cuts} cuts: {exc}",
                    diagnostics={
                        "phase": phase.name,
                        "step": state.step + 1,
                        "time_h": state.time,
                        "increment": delta * share,
                        "load_factors": dict(state.load_factors),
                        "cracked_elements": sorted(state.segments),
                        "reason": str(exc),
                    },
                ) from exc
            fraction = 0.5 * share
            logger.warning(f"cutting step {state.step + 1} of '{phase.name}' to {fraction:.4g} of the increment: {exc}")
            continue
        state = result.state
        remaining -= share
        row = history_row(analysis.model, state, phase, phase_index)
        rows.append(row)
        if on_row is not None:
            on_row(row)
        logger.debug(f"step {state.step}: t={state.time:.4g} h, lambda={row.load_factor:.6g}, "
                     f"CMOD={row.cmod:.4e} m, {result.report.iterations} iterations")
    return state, rows


def cmod_control_step(analysis: Analysis, state: GlobalState, pattern: str, delta_cmod: float,
                      step_time: float = 0.0) -> Tuple[float, GlobalState]:
    """
    One CMOD-controlled step of size delta_cmod (m).

    Returns:
        (load factor of `pattern`, converged state); a zero delta is a rest step
    """
    if delta_cmod == 0.0:
        rested = rest_step(state, step_time)
        return rested.load_factors.get(pattern, 0.0), rested
    phase = ControlSpec(name="cmod", mode=ControlMode.CMOD, pattern=pattern, increment=delta_cmod,
                        step_time=step_time, stop=StopKind.STEPS, steps=1)
    new_state, _ = advance(analysis, state, phase, delta_cmod, 0)
    return new_state.load_factors[pattern], new_state


# ============================================================================
# RELEASES
# ============================================================================

def assign_release_times(path: CrackPath, state: GlobalState) -> Dict[int, float]:
    """
    Release instant of every released segment of the path.

    A segment whose envelope drops to T_0 during the step that created it is
    released at that step's time; later releases happen at the step where the
    drop occurs. Segments still above T_0 are absent.
    """
    times = {}
    for segment in path.segments:
        cohesive = state.cohesive.get(segment.element_id)
        if cohesive is not None and cohesive.released:
            times[segment.element_id] = cohesive.t_r
    return times


def release_at_end(analysis: Analysis, state: GlobalState) -> GlobalState:
    """Move the release instant of every released point to the current time."""
    agent = analysis.model.agent
    if agent is None:
        return state
    updated = state.copy()
    moved = 0
    for element, cohesive in state.cohesive.items():
        if cohesive.released:
            updated.cohesive[element] = material_law.reassign_release(cohesive, state.time, analysis.model.material, agent)
            moved += 1
    logger.info(f"Release time of {moved} points set to t={state.time:.4g} h")
    return updated


def release_records(analysis: Analysis, state: GlobalState) -> List[ReleaseRecord]:
    records = []
    for segment in analysis.engine.path.segments:
        cohesive = state.cohesive.get(segment.element_id)
        if cohesive is None or not cohesive.released:
            continue
        records.append(ReleaseRecord(
            element_id=segment.element_id,
            position=segment.midpoint,
            release_time_h=cohesive.t_r,
            traction_at_release=cohesive.T_mx_r,
            contact_factor=cohesive.alpha,
        ))
    return records


# ============================================================================
# PROGRAM
# ============================================================================

def run_phase(analysis: Analysis, state: GlobalState, phase: ControlSpec, phase_index: int,
              on_row: Optional[RowCallback] = None) -> Tuple[GlobalState, List[HistoryRow]]:
    model = analysis.model
    rows: List[HistoryRow] = []
    steps_done = 0
    while steps_done < phase.max_steps:
        if phase.is_rest:
            if steps_done >= phase.steps:
                break
            state = rest_step(state, phase.step_time)
            row = history_row(model, state, phase, phase_index)
            rows.append(row)
            if on_row is not None:
                on_row(row)
            steps_done += 1
            continue
        delta = _next_increment(model, state, phase, steps_done)
        if delta is None:
            break
        state, new_rows = advance(analysis, state, phase, delta, phase_index, on_row)
        rows.extend(new_rows)
        steps_done += 1
    else:
        logger.warning(f"phase '{phase.name}' stopped at its step limit of {phase.max_steps}")
    if phase.release_at_end:
        state = release_at_end(analysis, state)
    return state, rows


def run_program(
    program: LoadProgram,
    analysis: Analysis,
    state: Optional[GlobalState] = None,
    start_phase: int = 0,
    end_phase: Optional[int] = None,
    on_row: Optional[RowCallback] = None,
    on_phase_end: Optional[Callable[[int, GlobalState], None]] = None,
) -> RunResult:
    """
    Execute the phases of a program in order.

    Args:
        program: Load program
        analysis: Model, crack engine and program owner
        state: Starting state (zero state when None)
        start_phase, end_phase: Slice of phases to execute
        on_row: Called with each history row as it is produced
        on_phase_end: Called with the phase index and state after each phase

    Returns:
        RunResult; a solver failure ends the run with an incomplete history
    """
    model = analysis.model
    state = state if state is not None else initial_state(model)
    history = RunHistory(scenario=analysis.name)
    diagnostics = None

    def collect(row: HistoryRow) -> None:
        history.rows.append(row)
        if on_row is not None:
            on_row(row)

    phases = program.phases[start_phase:end_phase]
    for index, phase in enumerate(phases, start=start_phase):
        logger.info(f"Phase {index} '{phase.name}': {phase.mode.value} control on '{phase.pattern}', "
                    f"t={state.time:.4g} h")
        try:
            state, rows = run_phase(analysis, state, phase, index, collect)
        except SolverFailure as exc:
            logger.error(f"Run '{analysis.name}' stopped: {exc}")
            history.complete = False
            history.failure = str(exc)
            diagnostics = exc.diagnostics
            break
        if on_phase_end is not None:
            on_phase_end(index, state)
        logger.info(f"Phase {index} '{phase.name}' done after {len(rows)} steps, "
                    f"CMOD={model.cmod(state.u) * 1e3:.4f} mm")
    history.crack_path = [tuple(p) for p in analysis.engine.path.polyline()]
    history.releases = release_records(analysis, state)
    return RunResult(history=history, state=state, diagnostics=diagnostics)
