import pytest

from app.schemas.history import HistoryRow
from app.services import simulation_service
from app.services.result_writer import read_history
from app.services.simulation_service import SimulationService
from tests.test_scenario_loader import MINIMAL


@pytest.fixture
def minimal(tmp_path):
    path = tmp_path / "minimal.scn"
    path.write_text(MINIMAL)
    return path


def test_run_writes_the_history(minimal, tmp_path):
    service = SimulationService()
    result = service.run(service.load(minimal), tmp_path / "out")
    assert result.history.complete
    assert len(read_history(tmp_path / "out" / "history.csv")) == len(result.history.rows)


def test_history_is_closed_when_the_run_raises(minimal, tmp_path, monkeypatch):
    def crashing(program, analysis, on_row=None, on_phase_end=None):
        on_row(HistoryRow(step=1, time_h=0.0, load_factor=0.1, reaction=100.0, cmod=0.0, control=100.0, phase=0))
        raise RuntimeError("assembly crashed")

    monkeypatch.setattr(simulation_service, "run_program", crashing)
    service = SimulationService()
    with pytest.raises(RuntimeError, match="assembly crashed"):
        service.run(service.load(minimal), tmp_path / "out")
    assert len(read_history(tmp_path / "out" / "history.csv")) == 1
