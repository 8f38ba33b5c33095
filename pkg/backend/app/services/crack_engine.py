"""
Crack initiation, propagation and embedding.

One crack path per analysis. A path starts at the seed (notch tip) and grows by
one element-wide chord at a time; the tip element must have softened and the
element ahead must have reached the tensile strength next to the tip. Tracked paths pick their
direction from a nonlocal stress average, prescribed paths follow a straight
line or the curve sqrt(y - y0) + a (x - x0) = 0.
"""
import logging
import math
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import GeometryError
from app.models import CrackPath, CrackSegment, GlobalState, InitiationSite, Mesh, PathMode
from app.schemas.material import BulkMaterial
from app.schemas.scenario import CrackMode, CrackSpec
from app.services import sda_kernel

logger = logging.getLogger(__name__)

ACTIVATION_RATIO = 0.99
STEP_INSIDE_FACTOR = 1e-6
MARCH_DIVISIONS = 32
BISECTION_STEPS = 60

# Stress of an uncracked element sampled at a point, (element, point) -> Voigt stress.
PointStress = Callable[[int, Sequence[float]], np.ndarray]

_PATH_MODES = {
    CrackMode.TRACKED: PathMode.TRACKED,
    CrackMode.STRAIGHT: PathMode.PRESCRIBED_STRAIGHT,
    CrackMode.CURVE: PathMode.PRESCRIBED_CURVE,
}


# ============================================================================
# STRESS MEASURES
# ============================================================================

def principal_stress(stress: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Largest principal stress of a Voigt stress and its direction.

    The direction is oriented with a positive x component (positive y when vertical).
    """
    values, vectors = np.linalg.eigh(sda_kernel.stress_voigt_to_tensor(stress))
    direction = vectors[:, 1]
    if direction[0] < -1e-12 or (abs(direction[0]) <= 1e-12 and direction[1] < 0.0):
        direction = -direction
    return float(values[1]), direction


def rankine_stress(stress: np.ndarray) -> float:
    return principal_stress(stress)[0]


def normal_traction(stress: np.ndarray, normal: np.ndarray) -> float:
    return float(normal @ sda_kernel.stress_voigt_to_tensor(stress) @ normal)


def rotate(vector: Sequence[float], angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * vector[0] - s * vector[1], s * vector[0] + c * vector[1]])


def scan_angles(half_angle_deg: float, step_deg: float) -> List[float]:
    """Candidate angles in radians ordered 0, +step, -step, +2 step, ..."""
    count = int(math.floor(half_angle_deg / step_deg + 1e-9))
    angles = [0.0]
    for k in range(1, count + 1):
        angles.extend((k * step_deg, -k * step_deg))
    return [math.radians(a) for a in angles]


def scan_direction(normal: Sequence[float], stress: np.ndarray, half_angle_deg: float = 45.0, step_deg: float = 1.0) -> np.ndarray:
    """Rotated normal maximizing n . sigma . n; ties keep the smallest rotation."""
    best_normal = np.asarray(normal, dtype=float)
    best_value = normal_traction(stress, best_normal)
    for angle in scan_angles(half_angle_deg, step_deg)[1:]:
        candidate = rotate(normal, angle)
        value = normal_traction(stress, candidate)
        if value > best_value + 1e-12 * abs(best_value):
            best_value, best_normal = value, candidate
    return best_normal


def nonlocal_stress(point: Sequence[float], stresses: np.ndarray, centroids: np.ndarray,
                    volumes: np.ndarray, radius: float) -> np.ndarray:
    """Gaussian-weighted average exp(-(r / R)^2) of element stresses around a point."""
    distance = np.linalg.norm(centroids - np.asarray(point, dtype=float), axis=1)
    weights = np.exp(-(distance / radius) ** 2) * volumes
    weights[distance > 3.0 * radius] = 0.0
    if weights.sum() == 0.0:
        weights[np.argmin(distance)] = 1.0
    return weights @ stresses / weights.sum()


# ============================================================================
# TOPOLOGY AND GEOMETRY
# ============================================================================

def point_in_element(point: Sequence[float], corners: np.ndarray, tolerance: float = 0.0) -> bool:
    """Point inside (or on) a convex counterclockwise quadrilateral."""
    p = np.asarray(point, dtype=float)
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross < -tolerance * np.linalg.norm(b - a):
            return False
    return True


class MeshTopology:
    """Edge and node adjacency of the element corners plus element sizes."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.edges: Dict[Tuple[int, int], List[int]] = {}
        self.node_elements: Dict[int, List[int]] = {}
        for element, nodes in enumerate(mesh.elements):
            corners = nodes[:4]
            for k in range(4):
                key = tuple(sorted((int(corners[k]), int(corners[(k + 1) % 4]))))
                self.edges.setdefault(key, []).append(element)
                self.node_elements.setdefault(int(corners[k]), []).append(element)
        self.sizes = np.array([
            math.sqrt(sda_kernel.polygon_area(mesh.corner_coordinates(e))) for e in range(mesh.n_elements)
        ])
        self.median_size = float(np.median(self.sizes))

    def edge_nodes(self, element: int, edge: int) -> Tuple[int, int]:
        corners = self.mesh.elements[element, :4]
        return int(corners[edge]), int(corners[(edge + 1) % 4])

    def neighbour(self, element: int, edge: int) -> Optional[int]:
        key = tuple(sorted(self.edge_nodes(element, edge)))
        others = [e for e in self.edges.get(key, []) if e != element]
        return others[0] if others else None

    def adjacent(self, element: int) -> List[int]:
        found = set()
        for node in self.mesh.elements[element, :4]:
            found.update(self.node_elements[int(node)])
        found.discard(element)
        return sorted(found)

    def locate(self, point: Sequence[float], candidates: Optional[Sequence[int]] = None) -> Optional[int]:
        elements = range(self.mesh.n_elements) if candidates is None else candidates
        for element in elements:
            if point_in_element(point, self.mesh.corner_coordinates(element), 1e-12):
                return int(element)
        return None


def _edge_of(point: np.ndarray, corners: np.ndarray) -> int:
    best, best_distance = -1, math.inf
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        e = b - a
        r = min(max(float((point - a) @ e / (e @ e)), 0.0), 1.0)
        distance = float(np.linalg.norm(a + r * e - point))
        if distance < best_distance:
            best, best_distance = k, distance
    return best


def chord_exit(mesh: Mesh, element: int, entry: Sequence[float], direction: Sequence[float]) -> Tuple[np.ndarray, int]:
    """
    Far intersection of the ray entry + s * direction with the element boundary.

    Raises:
        GeometryError: the ray does not cross the element
    """
    corners = mesh.corner_coordinates(element)
    size = math.sqrt(abs(sda_kernel.polygon_area(corners)))
    hits = sda_kernel.line_polygon_intersections(entry, direction, corners)
    forward = [hit for hit in hits if hit[0] > 1e-9 * size]
    if not forward:
        raise GeometryError(f"crack chord misses element {element}")
    s, edge, _ = forward[-1]
    return np.asarray(entry, dtype=float) + s * np.asarray(direction, dtype=float), edge


def embed(mesh: Mesh, element: int, entry: Sequence[float], exit_point: Sequence[float], step: int = 0) -> CrackSegment:
    """
    Crack segment for the chord entry -> exit through an element.

    The tangent points along the chord and the normal is the tangent turned by -90 degrees.

    Raises:
        GeometryError: zero-length chord or both points on the same edge
    """
    corners = mesh.corner_coordinates(element)
    entry = np.asarray(entry, dtype=float)
    exit_point = np.asarray(exit_point, dtype=float)
    chord = exit_point - entry
    length = float(np.linalg.norm(chord))
    if length <= 1e-9 * math.sqrt(abs(sda_kernel.polygon_area(corners))):
        raise GeometryError(f"zero-length crack chord in element {element}")
    tangent = chord / length
    normal = np.array([tangent[1], -tangent[0]])
    entry_edge, exit_edge = _edge_of(entry, corners), _edge_of(exit_point, corners)
    if entry_edge == exit_edge:
        raise GeometryError(f"crack chord enters and leaves element {element} through edge {entry_edge}")
    l_c = sda_kernel.characteristic_length(corners, normal)
    return CrackSegment(
        element_id=element,
        normal=(float(normal[0]), float(normal[1])),
        tangent=(float(tangent[0]), float(tangent[1])),
        entry_point=(float(entry[0]), float(entry[1])),
        exit_point=(float(exit_point[0]), float(exit_point[1])),
        l_c=l_c,
        entry_edge=entry_edge,
        exit_edge=exit_edge,
        created_step=step,
    )


def check_initiation(element: int, stresses: np.ndarray, material: BulkMaterial,
                     seed: Sequence[float]) -> Optional[InitiationSite]:
    """Rankine check of one element: a site when sigma_1 >= f_t, with n along sigma_1."""
    sigma_1, direction = principal_stress(stresses[element])
    if sigma_1 < material.tensile_strength:
        return None
    return InitiationSite(element_id=element, seed=(float(seed[0]), float(seed[1])),
                          normal=(float(direction[0]), float(direction[1])))


# ============================================================================
# CRACK ENGINE
# ============================================================================

class CrackEngine:
    """Owns the crack path of one analysis and decides when and where it grows."""

    def __init__(self, mesh: Mesh, material: BulkMaterial, spec: CrackSpec,
                 centroids: Optional[np.ndarray] = None, volumes: Optional[np.ndarray] = None):
        self.mesh = mesh
        self.material = material
        self.spec = spec
        self.topology = MeshTopology(mesh)
        self.centroids = centroids if centroids is not None else np.array(
            [mesh.corner_coordinates(e).mean(axis=0) for e in range(mesh.n_elements)])
        self.volumes = volumes if volumes is not None else self.topology.sizes ** 2
        self.radius = spec.nonlocal_radius_factor * self.topology.median_size
        angle = math.radians(spec.direction_deg)
        hint = (math.cos(angle), math.sin(angle))
        seed = spec.seed
        if spec.mode == CrackMode.CURVE:
            seed = (spec.curve_x0 if spec.curve_x0 is not None else spec.seed[0], spec.seed[1])
            hint = (0.0, 1.0)
        self.path = CrackPath(
            mode=_PATH_MODES[spec.mode],
            tip=(float(seed[0]), float(seed[1])),
            curve_a=spec.curve_a,
            curve_x0=float(seed[0]),
            curve_y0=float(seed[1]),
            direction=hint,
        )
        self.seed_element = self._element_ahead(seed, hint, exclude=())
        if self.seed_element is None:
            raise GeometryError(f"crack seed {tuple(seed)} does not touch the mesh")
        logger.info(f"Crack seed at ({seed[0]:.4g}, {seed[1]:.4g}) in element {self.seed_element} "
                    f"({self.path.mode.value})")

    # ------------------------------------------------------------------ queries

    def _step_inside(self, point: Sequence[float], direction: Sequence[float]) -> np.ndarray:
        return np.asarray(point, dtype=float) + STEP_INSIDE_FACTOR * self.topology.median_size * np.asarray(direction)

    def _element_ahead(self, point: Sequence[float], direction: Sequence[float],
                       exclude: Sequence[int], near: Optional[int] = None) -> Optional[int]:
        trial_point = self._step_inside(point, direction)
        candidates = None if near is None else self.topology.adjacent(near)
        element = self.topology.locate(trial_point, candidates)
        if element is None or element in exclude:
            return None
        return element

    def curve_point(self, parameter: float) -> np.ndarray:
        """Point of the prescribed curve at height parameter s = y - y0 >= 0."""
        offset = 0.0 if self.path.curve_a == 0.0 else math.sqrt(max(parameter, 0.0)) / self.path.curve_a
        return np.array([self.path.curve_x0 - offset, self.path.curve_y0 + parameter])

    def _curve_exit(self, element: int, parameter: float) -> Tuple[np.ndarray, float]:
        corners = self.mesh.corner_coordinates(element)
        step = self.topology.sizes[element] / MARCH_DIVISIONS
        inside, outside = parameter, None
        trial = parameter
        for _ in range(100 * MARCH_DIVISIONS):
            trial += step
            if not point_in_element(self.curve_point(trial), corners, 1e-12):
                outside = trial
                break
            inside = trial
        if outside is None:
            raise GeometryError(f"prescribed curve does not leave element {element}")
        for _ in range(BISECTION_STEPS):
            middle = 0.5 * (inside + outside)
            if point_in_element(self.curve_point(middle), corners, 1e-12):
                inside = middle
            else:
                outside = middle
        return self.curve_point(inside), inside

    # ---------------------------------------------------------------- growth

    def update(self, state: GlobalState, stresses: np.ndarray,
               point_stress: Optional[PointStress] = None) -> Optional[CrackSegment]:
        """
        At most one new segment for the converged state.

        Args:
            state: Converged state
            stresses: (n_elements, 3) element-averaged stresses
            point_stress: Samples the element ahead at the tip; the element average is used when None

        Returns:
            The embedded segment, or None when the path does not grow
        """
        if self.path.closed:
            return None
        if not self.path.segments:
            site = check_initiation(self.seed_element, stresses, self.material, self.path.tip)
            if site is None:
                return None
            return self._append(self._first_segment(site, stresses, state.step))
        return self.propagate(state, stresses, point_stress)

    def _first_segment(self, site: InitiationSite, stresses: np.ndarray, step: int) -> CrackSegment:
        entry = np.asarray(self.path.tip)
        element = site.element_id
        if self.path.mode == PathMode.PRESCRIBED_CURVE:
            exit_point, parameter = self._curve_exit(element, 0.0)
            self.path.tip_parameter = parameter
            return embed(self.mesh, element, entry, exit_point, step)
        if self.path.mode == PathMode.TRACKED:
            direction = sda_kernel.tangent_of(site.normal)
            if direction @ np.asarray(self.path.direction) < 0.0:
                direction = -direction
        else:
            direction = np.asarray(self.path.direction)
        exit_point, _ = chord_exit(self.mesh, element, entry, direction)
        return embed(self.mesh, element, entry, exit_point, step)

    def propagate(self, state: GlobalState, stresses: np.ndarray,
                  point_stress: Optional[PointStress] = None) -> Optional[CrackSegment]:
        """Grow the path by one segment when the tip has softened and the element ahead is critical."""
        tip = self.path.tip_segment
        cohesive = state.cohesive.get(tip.element_id)
        if cohesive is None or cohesive.T_mx >= ACTIVATION_RATIO * self.material.tensile_strength:
            return None
        entry = np.asarray(tip.exit_point)
        previous = np.asarray(tip.tangent)
        path_elements = [segment.element_id for segment in self.path.segments]

        if self.path.mode == PathMode.TRACKED:
            averaged = nonlocal_stress(entry, stresses, self.centroids, self.volumes, self.radius)
            normal = scan_direction(tip.normal, averaged, self.spec.scan_half_angle_deg, self.spec.scan_step_deg)
            direction = sda_kernel.tangent_of(normal)
            if direction @ previous < 0.0:
                direction = -direction
        elif self.path.mode == PathMode.PRESCRIBED_STRAIGHT:
            direction = np.asarray(self.path.direction)
        else:
            ahead = self.curve_point(self.path.tip_parameter + 1e-3 * self.topology.median_size)
            direction = (ahead - entry) / np.linalg.norm(ahead - entry)

        element = self._element_ahead(entry, direction, path_elements, near=tip.element_id)
        if element is None:
            self.path.closed = True
            logger.info(f"Crack path reached the boundary at ({entry[0]:.4g}, {entry[1]:.4g})")
            return None
        ahead = rankine_stress(stresses[element])
        if point_stress is not None:
            ahead = max(ahead, rankine_stress(point_stress(element, entry)))
        if ahead < self.material.tensile_strength:
            return None

        if self.path.mode == PathMode.PRESCRIBED_CURVE:
            exit_point, parameter = self._curve_exit(element, self.path.tip_parameter)
            segment = embed(self.mesh, element, entry, exit_point, state.step)
            self.path.tip_parameter = parameter
        else:
            exit_point, _ = chord_exit(self.mesh, element, entry, direction)
            segment = embed(self.mesh, element, entry, exit_point, state.step)
        return self._append(segment)

    def _append(self, segment: CrackSegment) -> CrackSegment:
        self.path.segments.append(segment)
        self.path.tip = segment.exit_point
        logger.info(f"Crack segment {len(self.path.segments)} in element {segment.element_id}: "
                    f"n=({segment.normal[0]:.3f}, {segment.normal[1]:.3f}), l_c={segment.l_c:.4g} m")
        return segment

    def snapshot(self) -> CrackPath:
        return replace(self.path, segments=list(self.path.segments))

    def restore(self, path: CrackPath) -> None:
        """Return to a snapshot taken before a step whose re-solve failed."""
        self.path = replace(path, segments=list(path.segments))
