from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from app.schemas.material import BulkMaterial, HealingAgent
from app.schemas.program import ControlMode, LoadProgram


class NodeSelector(BaseModel):
    """Selects mesh nodes: the node nearest to a point, the nodes inside a box (m) or a named node set."""
    at: Optional[Tuple[float, float]] = None
    box: Optional[Tuple[float, float, float, float]] = None
    node_set: Optional[str] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "NodeSelector":
        given = [value for value in (self.at, self.box, self.node_set) if value is not None]
        if len(given) != 1:
            raise ValueError("a node selector needs exactly one of 'at', 'box' or 'set'")
        return self


class SupportSpec(BaseModel):
    nodes: NodeSelector
    fix_x: bool = False
    fix_y: bool = False


class LoadPart(BaseModel):
    """Resultant (fx, fy) in N split evenly over the selected nodes."""
    nodes: NodeSelector
    fx: float = 0.0
    fy: float = 0.0


class LoadPatternSpec(BaseModel):
    """Reference load pattern at load factor 1."""
    parts: List[LoadPart] = Field(..., min_length=1)


class Component(str, Enum):
    X = "x"
    Y = "y"


class MonitorSpec(BaseModel):
    """Linear displacement measure: u(plus) - u(minus) along one component (minus optional)."""
    plus: NodeSelector
    minus: Optional[NodeSelector] = None
    component: Component = Component.X


class CrackMode(str, Enum):
    TRACKED = "tracked"
    STRAIGHT = "straight"
    CURVE = "curve"


class CrackSpec(BaseModel):
    mode: CrackMode = CrackMode.TRACKED
    seed: Tuple[float, float] = Field(..., description="Notch tip, m")
    direction_deg: float = Field(90.0, description="Crack line direction for straight paths")
    curve_a: float = Field(0.0, description="Curve parameter a of sqrt(y) + a (x - x0) = 0, 1/sqrt(m)")
    curve_x0: Optional[float] = Field(None, description="Curve parameter x0, m (defaults to the seed)")
    nonlocal_radius_factor: float = Field(1.5, gt=0)
    scan_half_angle_deg: float = Field(45.0, gt=0, le=90)
    scan_step_deg: float = Field(1.0, gt=0)


class MeshSpec(BaseModel):
    file: Optional[str] = None
    generator: Optional[str] = None
    parameters: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _exactly_one(self) -> "MeshSpec":
        if (self.file is None) == (self.generator is None):
            raise ValueError("[mesh] needs exactly one of 'file' or 'generator'")
        return self


class OutputSpec(BaseModel):
    history: bool = True
    crack_path: bool = True
    fields: bool = True
    releases: bool = True
    field_every_phase: bool = False


class ScenarioFile(BaseModel):
    """A parsed scenario: everything a run needs besides the mesh itself (SI units)."""
    name: str
    mesh: MeshSpec
    thickness: float = Field(..., gt=0, description="m")
    material: BulkMaterial
    healing: Optional[HealingAgent] = None
    healing_relevant: bool = False
    crack: CrackSpec
    supports: List[SupportSpec] = Field(..., min_length=1)
    patterns: Dict[str, LoadPatternSpec] = Field(..., min_length=1)
    monitors: Dict[str, MonitorSpec] = Field(default_factory=dict)
    cmod: Optional[MonitorSpec] = None
    program: LoadProgram
    output: OutputSpec = Field(default_factory=OutputSpec)
    source_path: Optional[str] = None

    @model_validator(mode="after")
    def _check_references(self) -> "ScenarioFile":
        if self.healing_relevant and self.healing is None:
            raise ValueError("scenario declares healing relevance but has no [healing] block")
        if self.healing is not None:
            self.healing.check_pairing(self.material)
        for phase in self.program.phases:
            if phase.pattern not in self.patterns:
                raise ValueError(f"phase '{phase.name}' references unknown pattern '{phase.pattern}'")
            if phase.monitor is not None and phase.monitor not in self.monitors:
                raise ValueError(f"phase '{phase.name}' references unknown monitor '{phase.monitor}'")
            if phase.mode == ControlMode.CMOD and self.cmod is None:
                raise ValueError(f"phase '{phase.name}' uses CMOD control but no [cmod] pair is defined")
        return self

    def without_healing(self) -> "ScenarioFile":
        """Non-healing reference copy of this scenario."""
        return self.model_copy(update={"healing": None, "healing_relevant": False})

    def with_healing(self, agent: Optional[HealingAgent]) -> "ScenarioFile":
        return self.model_copy(update={"healing": agent})


class ScenarioRunRequest(BaseModel):
    """Run options for a bundled scenario."""
    variant: Optional[str] = None
    overrides: List[str] = Field(default_factory=list, description="section.key=value")
    healing: bool = True
