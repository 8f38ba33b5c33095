"""
Scenario files and the analysis they describe.

A scenario is sectioned `key = value` text in engineering units: MPa for
stresses and moduli, N/m for fracture energies, mm for lengths, CMOD and
displacements, N for forces, h for times and mm^-1/2 for the curve parameter a.
Everything is converted to SI while reading.

    [scenario]        name, thickness, healing_relevant
    [mesh]            file | generator plus generator parameters
    [material]        E, nu, ft, Gf, beta, plane
    [healing]         fh_inf, Gh_inf, A_h, T0 | T0_ratio, b
    [crack]           mode, seed, direction, a, x0, radius_factor, scan_half_angle, scan_step
    [support.NAME]    set | at | box, fix_x, fix_y
    [pattern.NAME]    set | at | box (';'-separated for several parts), fx, fy
    [monitor.NAME]    plus_*, minus_*, component       ([cmod] has the same keys)
    [program.N]       name, mode, pattern, monitor, increment, step_time, stop, target, steps,
                      max_steps, release_at_end
    [output]          history, crack_path, fields, releases, field_every_phase
    [variant.NAME]    section.key = value overrides
"""
import configparser
import inspect
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.config import SolverControls, settings
from app.core.errors import ScenarioError
from app.data_import import mesher
from app.data_import.mesh_io import read_mesh
from app.models import Mesh
from app.schemas.program import ControlMode, StopKind
from app.schemas.scenario import MonitorSpec, NodeSelector, ScenarioFile
from app.services.continuation import Analysis
from app.services.crack_engine import CrackEngine
from app.services.fem_core import StructuralModel

logger = logging.getLogger(__name__)

MPA = 1e6
MM = 1e-3
CURVE_A = math.sqrt(1000.0)   # mm^-1/2 -> m^-1/2

SCENARIO_SUFFIX = ".scn"


# ============================================================================
# VALUE PARSERS
# ============================================================================

def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{value}'")


def _floats(value: str, count: Optional[int] = None) -> Tuple[float, ...]:
    numbers = tuple(float(token) for token in value.replace(",", " ").split())
    if count is not None and len(numbers) != count:
        raise ValueError(f"expected {count} numbers, got '{value}'")
    return numbers


def _scaled(factor: float) -> Callable[[str], float]:
    return lambda value: float(value) * factor


def _scaled_tuple(count: int, factor: float) -> Callable[[str], Tuple[float, ...]]:
    return lambda value: tuple(number * factor for number in _floats(value, count))


SECTION_KEYS: Dict[str, Dict[str, Tuple[str, Callable[[str], Any]]]] = {
    "scenario": {
        "name": ("name", str),
        "thickness": ("thickness", _scaled(MM)),
        "healing_relevant": ("healing_relevant", _bool),
    },
    "material": {
        "E": ("young_modulus", _scaled(MPA)),
        "nu": ("poisson_ratio", float),
        "ft": ("tensile_strength", _scaled(MPA)),
        "Gf": ("fracture_energy", float),
        "beta": ("mode_mix_beta", float),
        "plane": ("plane_mode", str),
    },
    "healing": {
        "fh_inf": ("ultimate_strength", _scaled(MPA)),
        "Gh_inf": ("ultimate_fracture_energy", float),
        "A_h": ("healing_rate", float),
        "T0": ("release_threshold", _scaled(MPA)),
        "T0_ratio": ("release_threshold_ratio", float),
        "b": ("contact_exponent", float),
    },
    "crack": {
        "mode": ("mode", str),
        "seed": ("seed", _scaled_tuple(2, MM)),
        "direction": ("direction_deg", float),
        "a": ("curve_a", _scaled(CURVE_A)),
        "x0": ("curve_x0", _scaled(MM)),
        "radius_factor": ("nonlocal_radius_factor", float),
        "scan_half_angle": ("scan_half_angle_deg", float),
        "scan_step": ("scan_step_deg", float),
    },
    "support": {
        "set": ("set", str),
        "at": ("at", str),
        "box": ("box", str),
        "fix_x": ("fix_x", _bool),
        "fix_y": ("fix_y", _bool),
    },
    "pattern": {
        "set": ("set", str),
        "at": ("at", str),
        "box": ("box", str),
        "fx": ("fx", str),
        "fy": ("fy", str),
    },
    "monitor": {
        **{f"{end}_{kind}": (f"{end}_{kind}", str) for end in ("plus", "minus") for kind in ("set", "at", "box")},
        "component": ("component", str),
    },
    "program": {
        "name": ("name", str),
        "mode": ("mode", str),
        "pattern": ("pattern", str),
        "monitor": ("monitor", str),
        "increment": ("increment", float),
        "step_time": ("step_time", float),
        "stop": ("stop", str),
        "target": ("target", float),
        "steps": ("steps", int),
        "max_steps": ("max_steps", int),
        "release_at_end": ("release_at_end", _bool),
    },
    "output": {
        "history": ("history", _bool),
        "crack_path": ("crack_path", _bool),
        "fields": ("fields", _bool),
        "releases": ("releases", _bool),
        "field_every_phase": ("field_every_phase", _bool),
    },
}
SECTION_KEYS["cmod"] = SECTION_KEYS["monitor"]


# ============================================================================
# PARSING
# ============================================================================

def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    return parser


def apply_override(parser: configparser.ConfigParser, override: str) -> None:
    """Apply 'section.key=value'; the section name may itself contain dots."""
    if "=" not in override:
        raise ScenarioError(f"override '{override}' is not of the form section.key=value")
    target, value = (part.strip() for part in override.split("=", 1))
    if "." not in target:
        raise ScenarioError(f"override '{override}' does not name a section")
    section, key = target.rsplit(".", 1)
    if not parser.has_section(section):
        parser.add_section(section)
    parser.set(section, key, value)


def parse_scenario(
    text: str,
    source: Optional[Path] = None,
    variant: Optional[str] = None,
    overrides: Sequence[str] = (),
    strict: bool = False,
) -> ScenarioFile:
    """
    Parse scenario text into a validated ScenarioFile.

    Raises:
        ScenarioError: syntax errors, unknown keys in strict mode, bad values or inconsistent blocks
    """
    parser = _new_parser()
    try:
        parser.read_string(text, source=str(source) if source else "<scenario>")
    except configparser.Error as exc:
        raise ScenarioError(f"scenario syntax error: {exc}") from exc

    if variant is not None:
        section = f"variant.{variant}"
        if not parser.has_section(section):
            known = [s.split(".", 1)[1] for s in parser.sections() if s.startswith("variant.")]
            raise ScenarioError(f"unknown variant '{variant}' (known: {', '.join(known) or 'none'})")
        for key, value in parser.items(section):
            apply_override(parser, f"{key}={value}")
    for override in overrides:
        apply_override(parser, override)

    try:
        data = _collect(parser, strict)
        data["source_path"] = str(source) if source else None
        return ScenarioFile.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"invalid scenario value: {exc}") from exc


def read_scenario(
    path: Union[str, Path],
    variant: Optional[str] = None,
    overrides: Sequence[str] = (),
    strict: bool = False,
) -> ScenarioFile:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    scenario = parse_scenario(path.read_text(), path, variant, overrides, strict)
    logger.info(f"Read scenario '{scenario.name}' from {path.name}"
                + (f" (variant {variant})" if variant else ""))
    return scenario


def _section(parser: configparser.ConfigParser, name: str, kind: str, strict: bool) -> Dict[str, Any]:
    known = SECTION_KEYS[kind]
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            message = f"unknown key '{key}' in [{name}]"
            if strict:
                raise ScenarioError(message)
            logger.warning(message)
            continue
        field, convert = known[key]
        try:
            values[field] = convert(raw)
        except ValueError as exc:
            raise ScenarioError(f"[{name}] {key}: {exc}") from exc
    return values


def _selector(values: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    selector = {}
    if f"{prefix}set" in values:
        selector["node_set"] = values[f"{prefix}set"]
    if f"{prefix}at" in values:
        selector["at"] = tuple(v * MM for v in _floats(values[f"{prefix}at"], 2))
    if f"{prefix}box" in values:
        selector["box"] = tuple(v * MM for v in _floats(values[f"{prefix}box"], 4))
    return selector


def _pattern(values: Dict[str, Any]) -> Dict[str, Any]:
    kind = next((k for k in ("set", "at", "box") if k in values), None)
    if kind is None:
        raise ValueError("a load pattern needs 'set', 'at' or 'box'")
    places = [item.strip() for item in values[kind].split(";") if item.strip()]

    def forces(key: str) -> List[float]:
        items = [float(item) for item in values.get(key, "0").split(";") if item.strip()]
        if len(items) == 1:
            return items * len(places)
        if len(items) != len(places):
            raise ValueError(f"'{key}' lists {len(items)} values for {len(places)} load points")
        return items

    fx, fy = forces("fx"), forces("fy")
    return {"parts": [{"nodes": _selector({kind: place}), "fx": x, "fy": y} for place, x, y in zip(places, fx, fy)]}


def _monitor(values: Dict[str, Any]) -> Dict[str, Any]:
    monitor = {"plus": _selector(values, "plus_")}
    minus = _selector(values, "minus_")
    if minus:
        monitor["minus"] = minus
    if "component" in values:
        monitor["component"] = values["component"]
    return monitor


def _phase(values: Dict[str, Any]) -> Dict[str, Any]:
    mode = ControlMode(values.get("mode", ControlMode.FORCE.value))
    stop = StopKind(values.get("stop", StopKind.STEPS.value))
    if mode != ControlMode.FORCE and "increment" in values:
        values["increment"] *= MM
    if "target" in values and (stop == StopKind.REACH_CMOD or (stop == StopKind.REACH_VALUE and mode != ControlMode.FORCE)):
        values["target"] *= MM
    return values


def _mesh(parser: configparser.ConfigParser, strict: bool) -> Dict[str, Any]:
    if not parser.has_section("mesh"):
        raise ValueError("missing [mesh] section")
    items = dict(parser.items("mesh"))
    spec: Dict[str, Any] = {}
    if "file" in items:
        spec["file"] = items.pop("file")
    if "generator" in items:
        spec["generator"] = items.pop("generator")
        generator = mesher.GENERATORS.get(spec["generator"])
        if generator is None:
            raise ValueError(f"unknown mesh generator '{spec['generator']}'")
        accepted = set(inspect.signature(generator).parameters) - {"thickness"}
        parameters = {}
        for key, raw in items.items():
            if key not in accepted:
                message = f"unknown mesh parameter '{key}' for generator '{spec['generator']}'"
                if strict:
                    raise ScenarioError(message)
                logger.warning(message)
                continue
            value = float(raw)
            parameters[key] = value if key in mesher.COUNT_PARAMETERS else value * MM
        spec["parameters"] = parameters
    elif items:
        message = f"unknown keys in [mesh]: {', '.join(sorted(items))}"
        if strict:
            raise ScenarioError(message)
        logger.warning(message)
    return spec


def _collect(parser: configparser.ConfigParser, strict: bool) -> Dict[str, Any]:
    if not parser.has_section("scenario"):
        raise ValueError("missing [scenario] section")
    data = _section(parser, "scenario", "scenario", strict)
    data["mesh"] = _mesh(parser, strict)
    data["material"] = _section(parser, "material", "material", strict) if parser.has_section("material") else {}

    if parser.has_section("healing"):
        healing = _section(parser, "healing", "healing", strict)
        ratio = healing.pop("release_threshold_ratio", None)
        if ratio is not None:
            if "tensile_strength" not in data["material"]:
                raise ValueError("T0_ratio needs the tensile strength ft in [material]")
            healing["release_threshold"] = ratio * data["material"]["tensile_strength"]
        data["healing"] = healing
    if parser.has_section("crack"):
        data["crack"] = _section(parser, "crack", "crack", strict)

    data["supports"], data["patterns"], data["monitors"], phases = [], {}, {}, []
    for name in parser.sections():
        kind, _, label = name.partition(".")
        if kind == "support":
            values = _section(parser, name, "support", strict)
            data["supports"].append({"nodes": _selector(values), "fix_x": values.get("fix_x", False),
                                     "fix_y": values.get("fix_y", False)})
        elif kind == "pattern":
            data["patterns"][label] = _pattern(_section(parser, name, "pattern", strict))
        elif kind == "monitor":
            data["monitors"][label] = _monitor(_section(parser, name, "monitor", strict))
        elif kind == "cmod" and not label:
            data["cmod"] = _monitor(_section(parser, name, "cmod", strict))
        elif kind == "program":
            try:
                order = int(label)
            except ValueError:
                raise ValueError(f"program sections are numbered, got [{name}]")
            phases.append((order, _phase(_section(parser, name, "program", strict))))
        elif kind == "output" and not label:
            data["output"] = _section(parser, name, "output", strict)
        elif kind in ("scenario", "mesh", "material", "healing", "crack", "variant"):
            continue
        else:
            message = f"unknown section [{name}]"
            if strict:
                raise ScenarioError(message)
            logger.warning(message)
    data["program"] = {"phases": [values for _, values in sorted(phases, key=lambda item: item[0])]}
    return data


# ============================================================================
# WRITING
# ============================================================================

def _number(value: float) -> str:
    return repr(float(value))


def _write_selector(selector: NodeSelector, prefix: str = "") -> Dict[str, str]:
    if selector.node_set is not None:
        return {f"{prefix}set": selector.node_set}
    if selector.at is not None:
        return {f"{prefix}at": ", ".join(_number(v / MM) for v in selector.at)}
    return {f"{prefix}box": ", ".join(_number(v / MM) for v in selector.box)}


def _write_monitor(monitor: MonitorSpec) -> Dict[str, str]:
    values = _write_selector(monitor.plus, "plus_")
    if monitor.minus is not None:
        values.update(_write_selector(monitor.minus, "minus_"))
    values["component"] = monitor.component.value
    return values


def format_scenario(scenario: ScenarioFile) -> str:
    """Scenario text (file units) that reads back to the same scenario."""
    parser = _new_parser()
    parser["scenario"] = {"name": scenario.name, "thickness": _number(scenario.thickness / MM),
                          "healing_relevant": str(scenario.healing_relevant).lower()}
    if scenario.mesh.file is not None:
        parser["mesh"] = {"file": scenario.mesh.file}
    else:
        mesh = {"generator": scenario.mesh.generator}
        for key, value in scenario.mesh.parameters.items():
            mesh[key] = str(int(value)) if key in mesher.COUNT_PARAMETERS else _number(value / MM)
        parser["mesh"] = mesh
    m = scenario.material
    parser["material"] = {"E": _number(m.young_modulus / MPA), "nu": _number(m.poisson_ratio),
                          "ft": _number(m.tensile_strength / MPA), "Gf": _number(m.fracture_energy),
                          "beta": _number(m.mode_mix_beta), "plane": m.plane_mode.value}
    if scenario.healing is not None:
        h = scenario.healing
        parser["healing"] = {"fh_inf": _number(h.ultimate_strength / MPA), "Gh_inf": _number(h.ultimate_fracture_energy),
                             "A_h": _number(h.healing_rate), "T0": _number(h.release_threshold / MPA),
                             "b": _number(h.contact_exponent)}
    c = scenario.crack
    crack = {"mode": c.mode.value, "seed": ", ".join(_number(v / MM) for v in c.seed),
             "direction": _number(c.direction_deg), "a": _number(c.curve_a / CURVE_A),
             "radius_factor": _number(c.nonlocal_radius_factor),
             "scan_half_angle": _number(c.scan_half_angle_deg), "scan_step": _number(c.scan_step_deg)}
    if c.curve_x0 is not None:
        crack["x0"] = _number(c.curve_x0 / MM)
    parser["crack"] = crack
    for k, support in enumerate(scenario.supports, start=1):
        values = _write_selector(support.nodes)
        values.update(fix_x=str(support.fix_x).lower(), fix_y=str(support.fix_y).lower())
        parser[f"support.{k}"] = values
    for name, pattern in scenario.patterns.items():
        selectors = [_write_selector(part.nodes) for part in pattern.parts]
        kinds = {next(iter(s)) for s in selectors}
        if len(kinds) != 1:
            raise ScenarioError(f"pattern '{name}' mixes selector kinds and cannot be written")
        kind = kinds.pop()
        parser[f"pattern.{name}"] = {
            kind: "; ".join(s[kind] for s in selectors),
            "fx": "; ".join(_number(part.fx) for part in pattern.parts),
            "fy": "; ".join(_number(part.fy) for part in pattern.parts),
        }
    for name, monitor in scenario.monitors.items():
        parser[f"monitor.{name}"] = _write_monitor(monitor)
    if scenario.cmod is not None:
        parser["cmod"] = _write_monitor(scenario.cmod)
    for k, phase in enumerate(scenario.program.phases, start=1):
        length = MM if phase.mode != ControlMode.FORCE else 1.0
        values = {"name": phase.name, "mode": phase.mode.value, "pattern": phase.pattern,
                  "increment": _number(phase.increment / length), "step_time": _number(phase.step_time),
                  "stop": phase.stop.value, "max_steps": str(phase.max_steps),
                  "release_at_end": str(phase.release_at_end).lower()}
        if phase.monitor is not None:
            values["monitor"] = phase.monitor
        if phase.steps is not None:
            values["steps"] = str(phase.steps)
        if phase.target is not None:
            in_mm = phase.stop == StopKind.REACH_CMOD or (phase.stop == StopKind.REACH_VALUE and phase.mode != ControlMode.FORCE)
            values["target"] = _number(phase.target / MM if in_mm else phase.target)
        parser[f"program.{k}"] = values
    o = scenario.output
    parser["output"] = {key: str(getattr(o, key)).lower() for key in SECTION_KEYS["output"]}

    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in parser.items(section))
        lines.append("")
    return "\n".join(lines)


def write_scenario(scenario: ScenarioFile, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_scenario(scenario))
    return path


# ============================================================================
# ANALYSIS
# ============================================================================

def load_mesh(scenario: ScenarioFile) -> Mesh:
    if scenario.mesh.file is not None:
        path = Path(scenario.mesh.file)
        if not path.is_absolute() and scenario.source_path:
            path = Path(scenario.source_path).parent / path
        return read_mesh(path, scenario.thickness)
    try:
        mesh = mesher.generate(scenario.mesh.generator, **scenario.mesh.parameters)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"mesh generator '{scenario.mesh.generator}': {exc}") from exc
    mesh.thickness = scenario.thickness
    return mesh


def resolve_nodes(selector: NodeSelector, mesh: Mesh) -> np.ndarray:
    """Zero-based node indices picked by a selector (never empty)."""
    if selector.node_set is not None:
        if selector.node_set not in mesh.node_sets:
            raise ScenarioError(f"mesh has no node set '{selector.node_set}'")
        nodes = np.asarray(mesh.node_sets[selector.node_set], dtype=int)
    elif selector.at is not None:
        nodes = np.array([int(np.argmin(np.linalg.norm(mesh.nodes - np.asarray(selector.at), axis=1)))])
    else:
        x0, y0, x1, y1 = selector.box
        tol = 1e-9 * float(np.ptp(mesh.nodes, axis=0).max())
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        nodes = np.flatnonzero((x >= min(x0, x1) - tol) & (x <= max(x0, x1) + tol)
                               & (y >= min(y0, y1) - tol) & (y <= max(y0, y1) + tol))
    if len(nodes) == 0:
        raise ScenarioError(f"node selector {selector.model_dump(exclude_none=True)} matches no node")
    return nodes


def _measure(monitor: MonitorSpec, mesh: Mesh) -> np.ndarray:
    vector = np.zeros(2 * mesh.n_nodes)
    component = 0 if monitor.component.value == "x" else 1
    plus = resolve_nodes(monitor.plus, mesh)
    vector[2 * plus + component] += 1.0 / len(plus)
    if monitor.minus is not None:
        minus = resolve_nodes(monitor.minus, mesh)
        vector[2 * minus + component] -= 1.0 / len(minus)
    return vector


def build_analysis(
    scenario: ScenarioFile,
    mesh: Optional[Mesh] = None,
    controls: Optional[SolverControls] = None,
) -> Analysis:
    """Model, crack engine and program for a scenario (mesh loaded or generated when not given)."""
    mesh = mesh if mesh is not None else load_mesh(scenario)
    constrained: List[int] = []
    for support in scenario.supports:
        nodes = resolve_nodes(support.nodes, mesh)
        if support.fix_x:
            constrained.extend((2 * nodes).tolist())
        if support.fix_y:
            constrained.extend((2 * nodes + 1).tolist())
    if not constrained:
        raise ScenarioError("supports fix no degree of freedom")

    patterns = {}
    for name, pattern in scenario.patterns.items():
        vector = np.zeros(2 * mesh.n_nodes)
        for part in pattern.parts:
            nodes = resolve_nodes(part.nodes, mesh)
            vector[2 * nodes] += part.fx / len(nodes)
            vector[2 * nodes + 1] += part.fy / len(nodes)
        if not vector.any():
            raise ScenarioError(f"load pattern '{name}' is zero")
        patterns[name] = vector

    monitors = {name: _measure(monitor, mesh) for name, monitor in scenario.monitors.items()}
    cmod = _measure(scenario.cmod, mesh) if scenario.cmod is not None else None
    controls = controls or SolverControls.from_settings()
    model = StructuralModel(mesh, scenario.material, scenario.healing, constrained, patterns, monitors, cmod, controls)
    engine = CrackEngine(mesh, scenario.material, scenario.crack, model.centroids, model.volumes)
    return Analysis(name=scenario.name, model=model, engine=engine, program=scenario.program)


# ============================================================================
# BUNDLED SCENARIOS
# ============================================================================

def scenario_dir() -> Path:
    return Path(settings.SCENARIO_DIR)


def list_scenarios(directory: Optional[Path] = None) -> List[str]:
    directory = directory or scenario_dir()
    return sorted(path.stem for path in directory.glob(f"*{SCENARIO_SUFFIX}"))


def bundled_scenario_path(name: str, directory: Optional[Path] = None) -> Path:
    path = (directory or scenario_dir()) / f"{name}{SCENARIO_SUFFIX}"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named '{name}'")
    return path


def list_variants(path: Union[str, Path]) -> List[str]:
    parser = _new_parser()
    parser.read_string(Path(path).read_text())
    return [s.split(".", 1)[1] for s in parser.sections() if s.startswith("variant.")]
