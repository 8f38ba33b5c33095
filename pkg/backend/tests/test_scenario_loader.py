import logging
import math

import numpy as np
import pytest

from app.core.errors import ScenarioError
from app.data_import import mesher
from app.data_import.mesh_io import write_mesh
from app.data_import.scenario_loader import (
    build_analysis,
    bundled_scenario_path,
    format_scenario,
    list_scenarios,
    list_variants,
    parse_scenario,
    read_scenario,
    resolve_nodes,
)
from app.schemas.program import ControlMode, StopKind
from app.schemas.scenario import CrackMode, NodeSelector

MPA = 1e6
MM = 1e-3

MINIMAL = """\
[scenario]
name = minimal
thickness = 50

[mesh]
generator = beam
columns = 11
rows = 4

[material]
E = 30000
nu = 0.2
ft = 3.0
Gf = 100

[crack]
mode = straight
seed = 420 30

[support.left]
set = support_left
fix_x = true
fix_y = true

[support.right]
set = support_right
fix_y = yes

[pattern.load]
set = load
fy = -1000

[program.1]
mode = force
pattern = load
increment = 100
stop = steps
steps = 2
"""


def bending(**options):
    return read_scenario(bundled_scenario_path("bending"), **options)


def test_bundled_scenarios():
    assert list_scenarios() == ["bending", "dam", "tension_shear"]
    for name in list_scenarios():
        scenario = read_scenario(bundled_scenario_path(name), strict=True)
        assert scenario.name == name
        assert scenario.healing is not None
        for variant in list_variants(bundled_scenario_path(name)):
            read_scenario(bundled_scenario_path(name), variant=variant, strict=True)


def test_bending_units_are_converted():
    scenario = bending()
    assert scenario.thickness == pytest.approx(0.1)
    assert scenario.material.young_modulus == pytest.approx(30e3 * MPA)
    assert scenario.material.tensile_strength == pytest.approx(3.0 * MPA)
    assert scenario.healing.ultimate_strength == pytest.approx(0.7 * MPA)
    assert scenario.healing.release_threshold == pytest.approx(1.5 * MPA)
    assert scenario.crack.seed == pytest.approx((0.42, 0.03))
    assert scenario.mesh.parameters["length"] == pytest.approx(0.84)
    assert scenario.mesh.parameters["columns"] == 39
    loading, unloading, rest, reloading = scenario.program.phases
    assert loading.mode == ControlMode.CMOD and loading.stop == StopKind.REACH_CMOD
    assert loading.increment == pytest.approx(0.005 * MM)
    assert loading.target == pytest.approx(0.3 * MM)
    assert loading.release_at_end
    assert unloading.increment == pytest.approx(-1000.0)
    assert rest.is_rest and rest.steps == 24 and rest.step_time == 1.0
    assert reloading.target == pytest.approx(0.6 * MM)
    assert scenario.program.reload_phase_index == 3


def test_variants_and_overrides():
    assert list_variants(bundled_scenario_path("bending")) == ["medium", "fine", "curve1", "curve2"]
    curve = bending(variant="curve1")
    assert curve.crack.mode == CrackMode.CURVE
    assert curve.crack.curve_a == pytest.approx(math.sqrt(1000.0))
    assert curve.crack.curve_x0 == pytest.approx(0.42)
    dam = read_scenario(bundled_scenario_path("dam"), variant="dt72")
    assert dam.program.phases[1].step_time == pytest.approx(7.2)
    overridden = bending(variant="medium", overrides=["healing.b=3.0", "mesh.rows=7"])
    assert overridden.healing.contact_exponent == 3.0
    assert overridden.mesh.parameters["columns"] == 75
    assert overridden.mesh.parameters["rows"] == 7


def test_dam_ramps_the_load_under_force_control():
    phases = read_scenario(bundled_scenario_path("dam")).program.phases
    assert phases[0].mode == ControlMode.FORCE
    assert phases[0].stop == StopKind.REACH_CMOD
    assert phases[0].target == pytest.approx(0.075e-3)
    assert phases[0].increment == pytest.approx(25000.0)
    assert phases[1].mode == ControlMode.CMOD


@pytest.mark.parametrize("options,message", [
    ({"variant": "coarse"}, "unknown variant 'coarse'"),
    ({"overrides": ["healing.b"]}, "section.key=value"),
    ({"overrides": ["b=3"]}, "does not name a section"),
    ({"overrides": ["material.E=stiff"]}, r"\[material\] E"),
    ({"overrides": ["healing.T0_ratio=1.5"]}, "exceeds"),
    ({"overrides": ["program.1.pattern=wind"]}, "unknown pattern 'wind'"),
    ({"overrides": ["mesh.columns=40"]}, None),
])
def test_invalid_scenarios(options, message):
    if message is None:
        scenario = bending(**options)
        with pytest.raises(ScenarioError, match="odd column count"):
            build_analysis(scenario)
        return
    with pytest.raises(ScenarioError, match=message):
        bending(**options)


def test_strict_mode_rejects_unknown_keys(caplog):
    text = MINIMAL.replace("Gf = 100", "Gf = 100\ncolour = grey")
    with pytest.raises(ScenarioError, match="unknown key 'colour'"):
        parse_scenario(text, strict=True)
    with caplog.at_level(logging.WARNING):
        scenario = parse_scenario(text)
    assert "unknown key 'colour'" in caplog.text
    assert scenario.material.fracture_energy == 100.0


def test_minimal_scenario_defaults():
    scenario = parse_scenario(MINIMAL)
    assert scenario.healing is None
    assert scenario.cmod is None
    assert scenario.output.history and not scenario.output.field_every_phase
    assert scenario.supports[1].fix_y and not scenario.supports[1].fix_x
    with pytest.raises(ScenarioError, match="no \\[healing\\] block"):
        parse_scenario(MINIMAL.replace("thickness = 50", "thickness = 50\nhealing_relevant = true"))
    with pytest.raises(ScenarioError, match="missing \\[scenario\\]"):
        parse_scenario(MINIMAL.replace("[scenario]", "[setup]"))
    with pytest.raises(ScenarioError, match="syntax"):
        parse_scenario("name = orphan\n")


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="not found"):
        read_scenario(tmp_path / "absent.scn")
    with pytest.raises(ScenarioError, match="no bundled scenario"):
        bundled_scenario_path("absent")


def test_formatted_scenario_reads_back():
    for name in list_scenarios():
        scenario = read_scenario(bundled_scenario_path(name))
        again = parse_scenario(format_scenario(scenario), strict=True)
        assert again.name == scenario.name
        assert again.thickness == pytest.approx(scenario.thickness)
        for block in ("material", "healing", "crack"):
            original, written = getattr(scenario, block).model_dump(), getattr(again, block).model_dump()
            for key, value in original.items():
                assert written[key] == (pytest.approx(value) if isinstance(value, (float, tuple)) else value)
        assert again.mesh.parameters == pytest.approx(scenario.mesh.parameters)
        assert again.supports == scenario.supports
        assert len(again.program.phases) == len(scenario.program.phases)
        for phase, written in zip(scenario.program.phases, again.program.phases):
            assert written.increment == pytest.approx(phase.increment)
            assert written.target == (None if phase.target is None else pytest.approx(phase.target))
            assert (written.mode, written.stop, written.steps) == (phase.mode, phase.stop, phase.steps)


def test_multi_point_load_pattern():
    scenario = read_scenario(bundled_scenario_path("dam"))
    parts = scenario.patterns["water"].parts
    assert [part.nodes.at for part in parts] == [pytest.approx((0.0, h)) for h in (1.2, 1.6, 2.0, 2.4)]
    assert [part.fx for part in parts] == [400.0, 300.0, 200.0, 100.0]
    with pytest.raises(ScenarioError, match="lists 2 values for 4 load points"):
        read_scenario(bundled_scenario_path("dam"), overrides=["pattern.water.fx=1; 2"])


class TestAnalysis:
    def test_bending_analysis(self):
        scenario = bending(overrides=["mesh.columns=11", "mesh.rows=4"])
        analysis = build_analysis(scenario)
        model = analysis.model
        assert model.mesh.n_elements == 43
        assert model.mesh.thickness == pytest.approx(0.1)
        assert len(model.dofs.constrained) == 3
        assert model.patterns["load"].magnitude == pytest.approx(1000.0)
        assert model.cmod_vector.sum() == pytest.approx(0.0)
        assert np.count_nonzero(model.cmod_vector) == 2
        assert model.agent == scenario.healing
        assert analysis.engine.seed_element is not None
        assert analysis.program == scenario.program

    def test_node_selectors(self):
        mesh = build_analysis(bending(overrides=["mesh.columns=11", "mesh.rows=4"])).model.mesh
        assert len(resolve_nodes(NodeSelector(node_set="top"), mesh)) == 2 * 11 + 1
        picked = resolve_nodes(NodeSelector(at=(0.419, 0.101)), mesh)
        assert np.allclose(mesh.nodes[picked[0]], [0.42, 0.1])
        boxed = resolve_nodes(NodeSelector(box=(0.0, 0.0, 0.84, 0.0)), mesh)
        assert np.allclose(mesh.nodes[boxed, 1], 0.0)
        with pytest.raises(ScenarioError, match="no node set 'side'"):
            resolve_nodes(NodeSelector(node_set="side"), mesh)
        with pytest.raises(ScenarioError, match="matches no node"):
            resolve_nodes(NodeSelector(box=(2.0, 2.0, 3.0, 3.0)), mesh)

    def test_mesh_file_relative_to_the_scenario(self, tmp_path):
        write_mesh(mesher.structured_mesh(np.linspace(0.0, 0.3, 4), np.array([0.0, 0.1])), tmp_path / "strip.mesh")
        text = MINIMAL.replace("generator = beam\ncolumns = 11\nrows = 4", "file = strip.mesh")
        text = text.replace("seed = 420 30", "seed = 150 0")
        text = text.replace("set = support_left", "box = 0 0 0 100").replace("set = support_right", "at = 300 0")
        text = text.replace("set = load", "at = 300 100")
        path = tmp_path / "strip.scn"
        path.write_text(text)
        analysis = build_analysis(read_scenario(path))
        assert analysis.model.mesh.n_elements == 3
        assert analysis.model.mesh.thickness == pytest.approx(0.05)
        assert len(analysis.model.dofs.constrained) == 2 * 3 + 1
