import pandas as pd
import pytest

from app.cli import EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from app.data_import.mesh_io import read_mesh
from tests.test_scenario_loader import MINIMAL


@pytest.fixture
def minimal(tmp_path):
    path = tmp_path / "minimal.scn"
    path.write_text(MINIMAL)
    return path


class TestRun:
    def test_writes_outputs(self, minimal, tmp_path, capsys):
        output = tmp_path / "out"
        assert main(["run", str(minimal), "-o", str(output)]) == EXIT_OK
        assert "minimal: 2 steps written" in capsys.readouterr().out
        history = pd.read_csv(output / "history.csv")
        assert history["step"].tolist() == [1, 2]
        assert (output / "fields_final.vtk").is_file()

    def test_override_is_applied(self, minimal, tmp_path):
        output = tmp_path / "out"
        assert main(["run", str(minimal), "--override", "program.1.steps=1", "-o", str(output)]) == EXIT_OK
        assert len(pd.read_csv(output / "history.csv")) == 1

    def test_unknown_scenario_is_an_input_error(self, tmp_path, capsys):
        assert main(["run", "no_such_scenario", "-o", str(tmp_path)]) == EXIT_INPUT
        assert "no bundled scenario" in capsys.readouterr().err

    def test_unknown_variant(self, minimal, tmp_path):
        assert main(["run", str(minimal), "--variant", "fine", "-o", str(tmp_path)]) == EXIT_INPUT

    def test_strict_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "typo.scn"
        path.write_text(MINIMAL.replace("nu = 0.2", "nu = 0.2\nnuu = 0.3"))
        assert main(["run", str(path), "--strict", "-o", str(tmp_path / "out")]) == EXIT_INPUT

    def test_bad_option_is_a_usage_error(self, minimal):
        assert main(["run", str(minimal), "--threads", "0"]) == EXIT_USAGE


class TestMesh:
    def test_generates_a_beam(self, tmp_path, capsys):
        path = tmp_path / "beam.mesh"
        code = main(["mesh", "beam", "--param", "columns=11", "--param", "rows=4", "-o", str(path)])
        assert code == EXIT_OK
        assert read_mesh(path).n_elements == 43
        assert "43 elements" in capsys.readouterr().out

    @pytest.mark.parametrize("params", [
        ["--param", "columns=12"],
        ["--param", "columns=eleven"],
        ["--param", "columns"],
        ["--param", "colour=3"],
    ])
    def test_invalid_parameters(self, tmp_path, params):
        assert main(["mesh", "beam", *params, "-o", str(tmp_path / "beam.mesh")]) == EXIT_USAGE

    def test_unknown_generator(self, tmp_path):
        assert main(["mesh", "bridge", "-o", str(tmp_path / "bridge.mesh")]) == EXIT_USAGE


class TestFit:
    @pytest.mark.parametrize("option", [
        ["--free", "ultimate_strength:0.1"],
        ["--free", "viscosity:0.1:1"],
        ["--free", "ultimate_strength:2:0.1"],
        ["--fixed", "healing_rate=fast"],
    ])
    def test_invalid_parameters(self, tmp_path, option):
        measured = tmp_path / "reload.csv"
        measured.write_text("0,0\n0.01,1\n0.02,2\n0.03,3\n0.04,4\n")
        assert main(["fit", "bending", "--measured", str(measured), *option, "-o", str(tmp_path)]) == EXIT_USAGE

    def test_missing_measured_file(self, tmp_path):
        code = main(["fit", "bending", "--measured", str(tmp_path / "absent.csv"), "--budget", "0",
                     "--grid-points", "1", "-o", str(tmp_path)])
        assert code == EXIT_INPUT


class TestReport:
    def test_reference_only_report(self, minimal, tmp_path):
        output = tmp_path / "report"
        assert main(["report", str(minimal), "-o", str(output)]) == EXIT_OK
        assert (output / "reference" / "history.csv").is_file()
        assert (output / "reference.csv").is_file()
        assert "reference: complete, 2 steps" in (output / "summary.txt").read_text()
