"""
HealFrac computational state - value-semantic containers shared by the solver services
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

# ============================================================================
# COHESIVE LAW STATE
# ============================================================================

@dataclass(frozen=True)
class CrackOpening:
    """Opening components along n and t and the effective opening."""
    zeta_n: float
    zeta_t: float
    zeta: float


@dataclass(frozen=True)
class BranchFlags:
    """Loading (envelope) or secant branch, for the original material and the agent."""
    original_loading: bool
    agent_loading: bool


@dataclass(frozen=True)
class CohesiveState:
    """History of one discontinuity point (SI units, time in h)."""
    zeta_n: float = 0.0
    zeta_t: float = 0.0
    zeta_mx: float = 0.0
    T_mx: float = 0.0
    released: bool = False
    t_r: float = 0.0
    T_mx_r: float = 0.0
    alpha: float = 0.0
    zeta_hx: float = 0.0
    time: float = 0.0

    @classmethod
    def virgin(cls, tensile_strength: float, time: float = 0.0) -> "CohesiveState":
        return cls(T_mx=tensile_strength, time=time)

    @property
    def is_virgin(self) -> bool:
        return self.zeta_mx == 0.0

    def evolve(self, **changes) -> "CohesiveState":
        return replace(self, **changes)


@dataclass(frozen=True)
class ProjectionPair:
    """V1 = n(x)n and V2 = (n(x)t)^S in engineering-strain Voigt form [xx, yy, 2xy]."""
    v1: np.ndarray
    v2: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """3x2 matrix [v1 v2]."""
        return np.column_stack((self.v1, self.v2))


@dataclass
class LocalSolveReport:
    delta_zeta_n: float = 0.0
    delta_zeta_t: float = 0.0
    iterations: int = 0
    residual_norm: float = 0.0
    converged: bool = False
    closed: bool = False
    branch_sweeps: int = 0


# ============================================================================
# MESH AND DOFS
# ============================================================================

@dataclass
class Mesh:
    """Q8 mesh: corner nodes then mid-edge nodes, counterclockwise, coordinates in m."""
    nodes: np.ndarray                      # (n_nodes, 2)
    elements: np.ndarray                   # (n_elements, 8) zero-based node indices
    thickness: float = 1.0
    node_ids: Optional[np.ndarray] = None  # labels as read from file
    element_ids: Optional[np.ndarray] = None
    node_sets: Dict[str, np.ndarray] = field(default_factory=dict)  # named zero-based node indices

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=int)
        if self.node_ids is None:
            self.node_ids = np.arange(1, len(self.nodes) + 1)
        if self.element_ids is None:
            self.element_ids = np.arange(1, len(self.elements) + 1)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_coordinates(self, element: int) -> np.ndarray:
        return self.nodes[self.elements[element]]

    def corner_coordinates(self, element: int) -> np.ndarray:
        return self.nodes[self.elements[element, :4]]


@dataclass
class DofSystem:
    """Two dofs per node (x then y); homogeneous supports on the constrained set."""
    n_dofs: int
    constrained: np.ndarray
    free: np.ndarray

    @classmethod
    def from_constraints(cls, n_nodes: int, constrained: List[int]) -> "DofSystem":
        n_dofs = 2 * n_nodes
        fixed = np.unique(np.asarray(constrained, dtype=int))
        mask = np.ones(n_dofs, dtype=bool)
        mask[fixed] = False
        return cls(n_dofs=n_dofs, constrained=fixed, free=np.flatnonzero(mask))


# ============================================================================
# CRACK GEOMETRY
# ============================================================================

class PathMode(str, Enum):
    TRACKED = "tracked"
    PRESCRIBED_STRAIGHT = "prescribed_straight"
    PRESCRIBED_CURVE = "prescribed_curve"


@dataclass(frozen=True)
class CrackSegment:
    element_id: int                 # zero-based element index
    normal: Tuple[float, float]
    tangent: Tuple[float, float]
    entry_point: Tuple[float, float]
    exit_point: Tuple[float, float]
    l_c: float
    entry_edge: int = -1
    exit_edge: int = -1
    created_step: int = 0

    @property
    def midpoint(self) -> Tuple[float, float]:
        return (0.5 * (self.entry_point[0] + self.exit_point[0]),
                0.5 * (self.entry_point[1] + self.exit_point[1]))


@dataclass(frozen=True)
class InitiationSite:
    element_id: int
    seed: Tuple[float, float]
    normal: Tuple[float, float]


@dataclass
class CrackPath:
    mode: PathMode
    segments: List[CrackSegment] = field(default_factory=list)
    tip: Optional[Tuple[float, float]] = None
    closed: bool = False
    curve_a: float = 0.0
    curve_x0: float = 0.0
    curve_y0: float = 0.0
    direction: Tuple[float, float] = (0.0, 1.0)
    tip_parameter: float = 0.0      # curve parameter of the tip for prescribed curves

    @property
    def tip_segment(self) -> Optional[CrackSegment]:
        return self.segments[-1] if self.segments else None

    def contains(self, element_id: int) -> bool:
        return any(segment.element_id == element_id for segment in self.segments)

    def polyline(self) -> List[Tuple[float, float]]:
        if not self.segments:
            return []
        points = [self.segments[0].entry_point]
        points.extend(segment.exit_point for segment in self.segments)
        return points


# ============================================================================
# GLOBAL STATE
# ============================================================================

@dataclass
class GlobalState:
    """Nodal displacements, load factors and per-element cohesive history."""
    u: np.ndarray
    load_factors: Dict[str, float]
    cohesive: Dict[int, CohesiveState] = field(default_factory=dict)
    segments: Dict[int, CrackSegment] = field(default_factory=dict)
    time: float = 0.0
    step: int = 0
    peak_reaction: float = 0.0

    def copy(self) -> "GlobalState":
        return GlobalState(
            u=self.u.copy(),
            load_factors=dict(self.load_factors),
            cohesive=dict(self.cohesive),
            segments=dict(self.segments),
            time=self.time,
            step=self.step,
            peak_reaction=self.peak_reaction,
        )
