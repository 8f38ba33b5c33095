"""
Run outputs: history, crack path and release CSVs, legacy ASCII field files and
the healing vs. reference comparison report.

History rows are appended as they are produced and synced to disk at the end of
every phase, so a solver failure leaves every completed row in place.
"""
import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from app.core.errors import StepCutRequest
from app.models import GlobalState
from app.schemas.history import HistoryRow, ReleaseRecord, RunHistory
from app.schemas.scenario import OutputSpec
from app.services import material_law
from app.services.crack_engine import principal_stress
from app.services.fem_core import StructuralModel

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.csv"
CRACK_PATH_FILE = "crack_path.csv"
RELEASES_FILE = "releases.csv"
FINAL_FIELDS_FILE = "fields_final.vtk"

HISTORY_COLUMNS = ["step", "time_h", "lambda", "reaction_N", "cmod_mm", "control"]
CRACK_PATH_COLUMNS = ["x_m", "y_m"]
RELEASE_COLUMNS = ["element", "x_m", "y_m", "t_r_h", "T_mx_r_MPa", "alpha"]

FLOAT_FORMAT = "%.10e"

# VTK_QUADRATIC_QUAD: corners then mid-edge nodes, the Mesh node order
VTK_Q8 = 23

PathLike = Union[str, Path]


# ============================================================================
# TABLES
# ============================================================================

def history_frame(rows: Iterable[HistoryRow]) -> pd.DataFrame:
    """History rows as a table in output units (CMOD in mm, control in N or m)."""
    records = [
        (row.step, row.time_h, row.load_factor, row.reaction, row.cmod * 1e3, row.control)
        for row in rows
    ]
    return pd.DataFrame.from_records(records, columns=HISTORY_COLUMNS).astype({"step": int})


def crack_path_frame(polyline: Sequence[Tuple[float, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(polyline), columns=CRACK_PATH_COLUMNS, dtype=float)


def release_frame(records: Iterable[ReleaseRecord]) -> pd.DataFrame:
    rows = [
        (r.element_id, r.position[0], r.position[1], r.release_time_h, r.traction_at_release / 1e6, r.contact_factor)
        for r in records
    ]
    return pd.DataFrame.from_records(rows, columns=RELEASE_COLUMNS).astype({"element": int})


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_history(history: RunHistory, directory: PathLike) -> Path:
    return _write_frame(history_frame(history.rows), Path(directory) / HISTORY_FILE)


def write_crack_path(polyline: Sequence[Tuple[float, float]], directory: PathLike) -> Path:
    return _write_frame(crack_path_frame(polyline), Path(directory) / CRACK_PATH_FILE)


def write_releases(records: Iterable[ReleaseRecord], directory: PathLike) -> Path:
    return _write_frame(release_frame(records), Path(directory) / RELEASES_FILE)


def read_history(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


class HistoryWriter:
    """
    Incremental history CSV.

    The header is written on creation; each appended row goes to the file at
    once and `sync` forces it to disk (called at every phase end).
    """

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle: Optional[TextIO] = self.path.open("w", newline="")
        history_frame([]).to_csv(self._handle, index=False)
        self.rows_written = 0

    def append(self, row: HistoryRow) -> None:
        if self._handle is None:
            raise ValueError(f"history writer for {self.path} is closed")
        history_frame([row]).to_csv(self._handle, index=False, header=False, float_format=FLOAT_FORMAT)
        self.rows_written += 1

    def sync(self) -> None:
        if self._handle is not None:
            self._handle.flush()
            os.fsync(self._handle.fileno())

    def close(self) -> None:
        if self._handle is not None:
            self.sync()
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "HistoryWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


# ============================================================================
# FIELDS
# ============================================================================

def field_values(model: StructuralModel, state: GlobalState) -> Dict[str, np.ndarray]:
    """
    Cell fields of a converged state: largest principal stress (Pa) and effective opening (m).

    Cracked elements report the stress of their cohesive balance; if that balance
    cannot be reproduced the elastic estimate is written instead.
    """
    solutions = {}
    if state.segments:
        try:
            solutions = model.assemble(state.u, state, state.time, need_tangent=False).solutions
        except StepCutRequest as exc:
            logger.warning(f"field output falls back to elastic stresses in cracked elements: {exc}")
    stresses = model.element_stresses(state.u, solutions)
    principal = np.array([principal_stress(s)[0] for s in stresses])
    opening = np.zeros(model.mesh.n_elements)
    beta = model.material.mode_mix_beta
    for element, cohesive in state.cohesive.items():
        opening[element] = material_law.effective_opening(cohesive.zeta_n, cohesive.zeta_t, beta)
    return {"max_principal_stress": principal, "zeta": opening}


def format_fields(model: StructuralModel, state: GlobalState, title: Optional[str] = None) -> str:
    mesh = model.mesh
    n_nodes, n_elements = mesh.n_nodes, mesh.n_elements
    displacement = state.u.reshape(n_nodes, 2)
    fields = field_values(model, state)

    lines = [
        "# vtk DataFile Version 3.0",
        title or f"HealFrac step {state.step} t={state.time:.6g} h",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n_nodes} double",
    ]
    lines.extend(f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist())
    lines.append(f"CELLS {n_elements} {9 * n_elements}")
    lines.extend("8 " + " ".join(str(n) for n in nodes) for nodes in mesh.elements.tolist())
    lines.append(f"CELL_TYPES {n_elements}")
    lines.extend([str(VTK_Q8)] * n_elements)
    lines.append(f"POINT_DATA {n_nodes}")
    lines.append("VECTORS displacement double")
    lines.extend(f"{ux:.10e} {uy:.10e} 0.0" for ux, uy in displacement.tolist())
    lines.append(f"CELL_DATA {n_elements}")
    for name, values in fields.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.10e}" for v in values.tolist())
    return "\n".join(lines) + "\n"


def write_fields(model: StructuralModel, state: GlobalState, path: PathLike, title: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_fields(model, state, title))
    logger.info(f"Wrote fields of step {state.step} to {path}")
    return path


# ============================================================================
# RUN OUTPUT SINK
# ============================================================================

class RunOutputs:
    """
    Writes the outputs requested by a scenario while a run progresses.

    Pass `on_row` and `on_phase_end` to `run_program`, then call `finish`
    with the result, also after a failed run. `close` alone releases the
    history file when the run raised.
    """

    def __init__(self, directory: PathLike, model: StructuralModel, spec: Optional[OutputSpec] = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.model = model
        self.spec = spec or OutputSpec()
        self.history = HistoryWriter(self.directory / HISTORY_FILE) if self.spec.history else None
        self.written: List[Path] = []

    def on_row(self, row: HistoryRow) -> None:
        if self.history is not None:
            self.history.append(row)

    def on_phase_end(self, index: int, state: GlobalState) -> None:
        if self.history is not None:
            self.history.sync()
        if self.spec.fields and self.spec.field_every_phase:
            self.written.append(write_fields(self.model, state, self.directory / f"fields_phase{index}.vtk"))

    def close(self) -> None:
        """Flush and close the history file; safe to call more than once."""
        if self.history is not None:
            self.history.close()

    def finish(self, history: RunHistory, state: GlobalState) -> List[Path]:
        self.close()
        if self.history is not None:
            self.written.insert(0, self.history.path)
        if self.spec.crack_path:
            self.written.append(write_crack_path(history.crack_path, self.directory))
        if self.spec.releases:
            self.written.append(write_releases(history.releases, self.directory))
        if self.spec.fields:
            self.written.append(write_fields(self.model, state, self.directory / FINAL_FIELDS_FILE))
        logger.info(f"Outputs of '{history.scenario}' in {self.directory}: "
                    f"{', '.join(p.name for p in self.written)}")
        return self.written


# ============================================================================
# REPORT
# ============================================================================

def phase_peaks(history: RunHistory) -> pd.DataFrame:
    """Peak force per phase and the CMOD where it occurs."""
    frame = pd.DataFrame([row.model_dump() for row in history.rows])
    if frame.empty:
        return pd.DataFrame(columns=["phase", "peak_N", "cmod_at_peak_mm", "steps"])
    grouped = frame.groupby("phase")
    peaks = frame.loc[grouped["reaction"].idxmax()]
    return pd.DataFrame({
        "phase": peaks["phase"].to_numpy(),
        "peak_N": peaks["reaction"].to_numpy(),
        "cmod_at_peak_mm": peaks["cmod"].to_numpy() * 1e3,
        "steps": grouped.size().to_numpy(),
    })


def comparison_frame(runs: Dict[str, RunHistory]) -> pd.DataFrame:
    """Long table run,phase,cmod_mm,reaction_N of several runs."""
    frames = []
    for label, history in runs.items():
        frame = history_frame(history.rows)[["cmod_mm", "reaction_N"]]
        frame.insert(0, "phase", [row.phase for row in history.rows])
        frame.insert(0, "run", label)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def gnuplot_script(labels: Sequence[str], data_file: str = "comparison.csv") -> str:
    lines = [
        "set datafile separator ','",
        "set xlabel 'CMOD (mm)'",
        "set ylabel 'Force (N)'",
        "set key top right",
        "set grid",
    ]
    plots = [
        f"'{label}.csv' using 1:2 with lines title '{label}'"
        for label in labels
    ]
    lines.append("plot " + ", \\\n     ".join(plots))
    lines.append(f"# all runs in long form: {data_file}")
    return "\n".join(lines) + "\n"


def write_report(runs: Dict[str, RunHistory], directory: PathLike) -> List[Path]:
    """
    Comparison of runs: one `label.csv` curve per run, the long-form table, a
    peak summary and a gnuplot script.
    """
    directory = Path(directory)
    written = []
    for label, history in runs.items():
        curve = history_frame(history.rows)[["cmod_mm", "reaction_N"]]
        written.append(_write_frame(curve, directory / f"{label}.csv"))
    written.append(_write_frame(comparison_frame(runs), directory / "comparison.csv"))

    summary = []
    for label, history in runs.items():
        peaks = phase_peaks(history)
        peaks.insert(0, "run", label)
        summary.append(peaks)
    table = pd.concat(summary, ignore_index=True)
    written.append(_write_frame(table, directory / "summary.csv"))

    text = [f"{label}: {'complete' if h.complete else 'incomplete (' + (h.failure or '') + ')'}, "
            f"{len(h.rows)} steps, {len(h.releases)} releases" for label, h in runs.items()]
    text.append("")
    text.append(table.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    summary_path = directory / "summary.txt"
    summary_path.write_text("\n".join(text) + "\n")
    written.append(summary_path)

    script = directory / "report.gp"
    script.write_text(gnuplot_script(list(runs)))
    written.append(script)
    logger.info(f"Report of {len(runs)} runs written to {directory}")
    return written
