"""
Scenario runs shared by the command line and the HTTP surface.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from app.core.config import SolverControls
from app.data_import.scenario_loader import bundled_scenario_path, build_analysis, read_scenario
from app.schemas.history import RunHistory
from app.schemas.scenario import ScenarioFile
from app.services.continuation import RunResult, run_program
from app.services.result_writer import RunOutputs, write_report

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class SimulationService:
    """Loads scenarios and runs them, optionally writing their outputs."""

    def __init__(self, controls: Optional[SolverControls] = None, threads: Optional[int] = None):
        self.controls = controls or SolverControls.from_settings()
        if threads is not None:
            self.controls = self.controls.model_copy(update={"assembly_threads": threads})

    def load(
        self,
        source: PathLike,
        variant: Optional[str] = None,
        overrides: Sequence[str] = (),
        strict: bool = False,
        healing: bool = True,
    ) -> ScenarioFile:
        """
        Read a scenario from a path, or a bundled scenario by name.

        Raises:
            ScenarioError: unreadable or invalid scenario
        """
        path = Path(source)
        if not path.is_file() and path.suffix == "" and len(path.parts) == 1:
            path = bundled_scenario_path(str(source))
        scenario = read_scenario(path, variant, overrides, strict)
        return scenario if healing else scenario.without_healing()

    def run(self, scenario: ScenarioFile, output_dir: Optional[PathLike] = None) -> RunResult:
        """
        Run every phase of a scenario.

        A solver failure does not raise: the result carries an incomplete history
        and the outputs written so far stay on disk.
        """
        analysis = build_analysis(scenario, controls=self.controls)
        outputs = RunOutputs(output_dir, analysis.model, scenario.output) if output_dir is not None else None
        try:
            result = run_program(
                analysis.program,
                analysis,
                on_row=outputs.on_row if outputs else None,
                on_phase_end=outputs.on_phase_end if outputs else None,
            )
        finally:
            if outputs is not None:
                outputs.close()
        if outputs is not None:
            outputs.finish(result.history, result.state)
        status = "complete" if result.history.complete else "incomplete"
        logger.info(f"Run '{scenario.name}' {status}: {len(result.history.rows)} steps, "
                    f"{len(result.history.crack_path)} crack path points")
        return result

    def compare(self, scenario: ScenarioFile, output_dir: PathLike) -> Dict[str, RunHistory]:
        """Run a scenario with and without its healing agent and write the comparison report."""
        output_dir = Path(output_dir)
        runs: Dict[str, RunHistory] = {}
        variants = [("healing", scenario)] if scenario.healing is not None else []
        variants.append(("reference", scenario.without_healing()))
        for label, variant in variants:
            runs[label] = self.run(variant, output_dir / label).history
        write_report(runs, output_dir)
        return runs

    @staticmethod
    def failures(runs: Dict[str, RunHistory]) -> List[str]:
        return [f"{label}: {history.failure}" for label, history in runs.items() if not history.complete]
