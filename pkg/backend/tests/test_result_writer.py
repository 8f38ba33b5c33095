import numpy as np
import pandas as pd
import pytest

from app.schemas.history import HistoryRow, ReleaseRecord, RunHistory
from app.schemas.scenario import OutputSpec
from app.services.continuation import initial_state, run_program
from app.services.result_writer import (
    HISTORY_COLUMNS,
    VTK_Q8,
    HistoryWriter,
    RunOutputs,
    field_values,
    format_fields,
    gnuplot_script,
    history_frame,
    phase_peaks,
    read_history,
    release_frame,
    write_history,
    write_releases,
    write_report,
)
from tests.test_continuation import strip_analysis


def make_row(step, reaction, cmod, phase=0, time_h=0.0):
    return HistoryRow(step=step, time_h=time_h, load_factor=reaction, reaction=reaction, cmod=cmod,
                      control=cmod, phase=phase)


@pytest.fixture
def history() -> RunHistory:
    rows = [
        make_row(1, 100.0, 1e-5),
        make_row(2, 300.0, 2e-5),
        make_row(3, 200.0, 3e-5),
        make_row(4, 0.0, 3e-5, phase=1, time_h=24.0),
        make_row(5, 150.0, 4e-5, phase=2, time_h=24.0),
        make_row(6, 120.0, 5e-5, phase=2, time_h=24.0),
    ]
    return RunHistory(scenario="synthetic", rows=rows, crack_path=[(0.1, 0.0), (0.1, 0.02)])


class TestTables:
    def test_history_frame_units(self, history):
        frame = history_frame(history.rows)
        assert list(frame.columns) == HISTORY_COLUMNS
        assert frame["cmod_mm"].tolist() == pytest.approx([0.01, 0.02, 0.03, 0.03, 0.04, 0.05])
        assert frame["step"].dtype.kind == "i"

    def test_empty_history_keeps_its_header(self, tmp_path):
        path = write_history(RunHistory(scenario="empty"), tmp_path)
        assert path.read_text().splitlines() == [",".join(HISTORY_COLUMNS)]

    def test_release_frame_in_mpa(self, tmp_path):
        record = ReleaseRecord(element_id=7, position=(0.1, 0.02), release_time_h=12.0,
                               traction_at_release=1.2e6, contact_factor=0.36)
        frame = release_frame([record])
        assert frame.loc[0, "T_mx_r_MPa"] == pytest.approx(1.2)
        assert frame.loc[0, "element"] == 7
        written = pd.read_csv(write_releases([record], tmp_path))
        assert written.loc[0, "alpha"] == pytest.approx(0.36)

    def test_written_history_reads_back(self, history, tmp_path):
        frame = read_history(write_history(history, tmp_path))
        assert frame["reaction_N"].tolist() == pytest.approx([row.reaction for row in history.rows])
        assert "e-02" in (tmp_path / "history.csv").read_text()


class TestHistoryWriter:
    def test_header_exists_before_any_row(self, tmp_path):
        writer = HistoryWriter(tmp_path / "run" / "history.csv")
        writer.sync()
        assert writer.path.read_text().strip() == ",".join(HISTORY_COLUMNS)
        writer.close()

    def test_rows_are_on_disk_after_sync(self, history, tmp_path):
        writer = HistoryWriter(tmp_path / "history.csv")
        for row in history.rows[:3]:
            writer.append(row)
        writer.sync()
        frame = read_history(writer.path)
        assert len(frame) == 3
        assert writer.rows_written == 3
        writer.close()

    def test_append_after_close_fails(self, history, tmp_path):
        with HistoryWriter(tmp_path / "history.csv") as writer:
            writer.append(history.rows[0])
        with pytest.raises(ValueError, match="closed"):
            writer.append(history.rows[1])
        writer.close()


class TestFields:
    def test_legacy_vtk_layout(self, strip, material):
        analysis = strip_analysis(strip, material)
        state = initial_state(analysis.model)
        text = format_fields(analysis.model, state, title="strip")
        lines = text.splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert lines[1] == "strip"
        assert f"POINTS {strip.n_nodes} double" in lines
        assert f"CELLS {strip.n_elements} {9 * strip.n_elements}" in lines
        types_at = lines.index(f"CELL_TYPES {strip.n_elements}")
        assert lines[types_at + 1:types_at + 1 + strip.n_elements] == [str(VTK_Q8)] * strip.n_elements
        assert "SCALARS max_principal_stress double 1" in lines
        assert "SCALARS zeta double 1" in lines

    def test_fields_after_loading(self, strip, material):
        analysis = strip_analysis(strip, material)
        state = run_program(analysis.program, analysis, end_phase=1).state
        fields = field_values(analysis.model, state)
        assert fields["max_principal_stress"].shape == (3,)
        assert np.all(fields["max_principal_stress"] > 0.0)
        assert fields["max_principal_stress"].max() < material.tensile_strength
        assert np.all(fields["zeta"] == 0.0)


class TestRunOutputs:
    def test_finish_writes_every_requested_file(self, strip, material, tmp_path):
        analysis = strip_analysis(strip, material)
        outputs = RunOutputs(tmp_path, analysis.model, OutputSpec(field_every_phase=True))
        result = run_program(analysis.program, analysis, on_row=outputs.on_row, on_phase_end=outputs.on_phase_end)
        written = outputs.finish(result.history, result.state)
        names = [path.name for path in written]
        assert names[0] == "history.csv"
        assert {"crack_path.csv", "releases.csv", "fields_final.vtk"} <= set(names)
        assert {"fields_phase0.vtk", "fields_phase1.vtk", "fields_phase2.vtk"} <= set(names)
        assert len(read_history(tmp_path / "history.csv")) == len(result.history.rows)

    def test_close_keeps_streamed_rows(self, history, strip, material, tmp_path):
        analysis = strip_analysis(strip, material)
        outputs = RunOutputs(tmp_path, analysis.model)
        for row in history.rows[:2]:
            outputs.on_row(row)
        outputs.close()
        outputs.close()
        assert len(read_history(tmp_path / "history.csv")) == 2

    def test_disabled_outputs_are_skipped(self, strip, material, tmp_path):
        analysis = strip_analysis(strip, material)
        spec = OutputSpec(history=False, fields=False, releases=False)
        outputs = RunOutputs(tmp_path, analysis.model, spec)
        result = run_program(analysis.program, analysis, end_phase=1, on_row=outputs.on_row)
        written = outputs.finish(result.history, result.state)
        assert [path.name for path in written] == ["crack_path.csv"]
        assert not (tmp_path / "history.csv").exists()


class TestReport:
    def test_phase_peaks(self, history):
        peaks = phase_peaks(history)
        assert peaks["phase"].tolist() == [0, 1, 2]
        assert peaks["peak_N"].tolist() == pytest.approx([300.0, 0.0, 150.0])
        assert peaks["cmod_at_peak_mm"].tolist() == pytest.approx([0.02, 0.03, 0.04])
        assert peaks["steps"].tolist() == [3, 1, 2]

    def test_phase_peaks_of_an_empty_run(self):
        assert phase_peaks(RunHistory(scenario="empty")).empty

    def test_gnuplot_script_plots_each_run(self):
        script = gnuplot_script(["healing", "reference"])
        assert "'healing.csv' using 1:2 with lines title 'healing'" in script
        assert "'reference.csv'" in script

    def test_write_report(self, history, tmp_path):
        reference = history.model_copy(update={"complete": False, "failure": "step 6 failed"})
        written = write_report({"healing": history, "reference": reference}, tmp_path)
        assert {path.name for path in written} == {
            "healing.csv", "reference.csv", "comparison.csv", "summary.csv", "summary.txt", "report.gp",
        }
        comparison = pd.read_csv(tmp_path / "comparison.csv")
        assert list(comparison.columns) == ["run", "phase", "cmod_mm", "reaction_N"]
        assert len(comparison) == 2 * len(history.rows)
        summary = (tmp_path / "summary.txt").read_text()
        assert "healing: complete, 6 steps" in summary
        assert "reference: incomplete (step 6 failed)" in summary
