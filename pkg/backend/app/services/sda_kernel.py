"""
Element-level embedded strong discontinuity mechanics.

Tensors are handled in Voigt form [xx, yy, xy] internally; strains carry the
engineering shear 2*eps_xy so that V:sigma = v . sigma. The public helpers
that talk about tensors take and return symmetric 2x2 arrays.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import SolverControls
from app.core.errors import GeometryError, LocalSolveError
from app.models import BranchFlags, CohesiveState, CrackOpening, CrackSegment, LocalSolveReport, ProjectionPair
from app.schemas.material import BulkMaterial, HealingAgent, PlaneMode
from app.services import material_law

logger = logging.getLogger(__name__)

_DEFAULT_CONTROLS = SolverControls()


# ============================================================================
# TENSOR HELPERS
# ============================================================================

def elasticity_matrix(material: BulkMaterial) -> np.ndarray:
    """Plane stress or plane strain elasticity in Voigt form (engineering shear)."""
    E, nu = material.young_modulus, material.poisson_ratio
    if material.plane_mode == PlaneMode.PLANE_STRAIN:
        factor = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return factor * np.array([
            [1.0 - nu, nu, 0.0],
            [nu, 1.0 - nu, 0.0],
            [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)],
        ])
    factor = E / (1.0 - nu * nu)
    return factor * np.array([
        [1.0, nu, 0.0],
        [nu, 1.0, 0.0],
        [0.0, 0.0, 0.5 * (1.0 - nu)],
    ])


def strain_tensor_to_voigt(strain: np.ndarray) -> np.ndarray:
    return np.array([strain[0, 0], strain[1, 1], 2.0 * strain[0, 1]])


def strain_voigt_to_tensor(strain: np.ndarray) -> np.ndarray:
    return np.array([[strain[0], 0.5 * strain[2]], [0.5 * strain[2], strain[1]]])


def stress_tensor_to_voigt(stress: np.ndarray) -> np.ndarray:
    return np.array([stress[0, 0], stress[1, 1], stress[0, 1]])


def stress_voigt_to_tensor(stress: np.ndarray) -> np.ndarray:
    return np.array([[stress[0], stress[2]], [stress[2], stress[1]]])


def tangent_of(normal: Sequence[float]) -> np.ndarray:
    """Unit tangent obtained by rotating the normal by +90 degrees."""
    return np.array([-normal[1], normal[0]], dtype=float)


def projection_pair(normal: Sequence[float], tangent: Optional[Sequence[float]] = None) -> ProjectionPair:
    n = np.asarray(normal, dtype=float)
    t = tangent_of(n) if tangent is None else np.asarray(tangent, dtype=float)
    v1 = np.array([n[0] * n[0], n[1] * n[1], 2.0 * n[0] * n[1]])
    v2 = np.array([n[0] * t[0], n[1] * t[1], n[0] * t[1] + n[1] * t[0]])
    return ProjectionPair(v1=v1, v2=v2)


def segment_projection(segment: CrackSegment) -> ProjectionPair:
    return projection_pair(segment.normal, segment.tangent)


# ============================================================================
# GEOMETRY
# ============================================================================

def polygon_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(polygon: np.ndarray) -> np.ndarray:
    x, y = polygon[:, 0], polygon[:, 1]
    x_next, y_next = np.roll(x, -1), np.roll(y, -1)
    cross = x * y_next - x_next * y
    area = 0.5 * cross.sum()
    return np.array([((x + x_next) * cross).sum(), ((y + y_next) * cross).sum()]) / (6.0 * area)


def line_polygon_intersections(
    point: Sequence[float],
    direction: Sequence[float],
    polygon: np.ndarray,
    tolerance: float = 1e-12,
) -> List[Tuple[float, int, float]]:
    """
    Intersections of the line point + s*direction with the polygon boundary.

    Returns:
        Sorted list of (s, edge index, edge parameter r in [0, 1])
    """
    p = np.asarray(point, dtype=float)
    d = np.asarray(direction, dtype=float)
    hits = []
    count = len(polygon)
    for edge in range(count):
        a = polygon[edge]
        b = polygon[(edge + 1) % count]
        e = b - a
        denominator = d[0] * (-e[1]) - d[1] * (-e[0])
        if abs(denominator) < tolerance * max(np.linalg.norm(e), 1e-300):
            continue
        rhs = a - p
        s = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / denominator
        r = (d[0] * rhs[1] - d[1] * rhs[0]) / denominator
        if -tolerance <= r <= 1.0 + tolerance:
            hits.append((float(s), edge, float(min(max(r, 0.0), 1.0))))
    hits.sort()
    return hits


def characteristic_length(element_nodes: np.ndarray, normal: Sequence[float]) -> float:
    """
    l_c = V / A for a quadrilateral and a crack normal.

    Args:
        element_nodes: Corner coordinates (the first four rows are used)
        normal: Unit crack normal

    Returns:
        Element area divided by the length of the centroid chord parallel to the crack
    """
    corners = np.asarray(element_nodes, dtype=float)[:4]
    area = polygon_area(corners)
    if area <= 0.0:
        raise GeometryError(f"degenerate or clockwise element (area {area:.3e})")
    centroid = polygon_centroid(corners)
    hits = line_polygon_intersections(centroid, tangent_of(normal), corners)
    if len(hits) < 2:
        raise GeometryError("centroid chord does not cross the element")
    chord = hits[-1][0] - hits[0][0]
    if chord <= 0.0:
        raise GeometryError("centroid chord has zero length")
    return area / chord


# ============================================================================
# ENHANCED STRAIN AND STRESS
# ============================================================================

def _enhanced_voigt(zeta_n: float, zeta_t: float, projection: ProjectionPair, l_c: float) -> np.ndarray:
    return (projection.v1 * zeta_n + projection.v2 * zeta_t) / l_c


def enhanced_strain(zeta_n: float, zeta_t: float, segment: CrackSegment) -> np.ndarray:
    """(1 / l_c) [V1 zeta_n + V2 zeta_t] as a symmetric 2x2 tensor."""
    return strain_voigt_to_tensor(_enhanced_voigt(zeta_n, zeta_t, segment_projection(segment), segment.l_c))


def trial_stress(
    total_strain: np.ndarray,
    state: CohesiveState,
    segment: CrackSegment,
    material: BulkMaterial,
) -> np.ndarray:
    """sigma_tr = C : (eps_t - enhanced strain of the previous opening), 2x2 tensors."""
    strain = strain_tensor_to_voigt(total_strain)
    enhanced = _enhanced_voigt(state.zeta_n, state.zeta_t, segment_projection(segment), segment.l_c)
    return stress_voigt_to_tensor(elasticity_matrix(material) @ (strain - enhanced))


# ============================================================================
# LOCAL BALANCE
# ============================================================================

@dataclass
class LocalSolution:
    report: LocalSolveReport
    stress: np.ndarray            # Voigt
    opening: CrackOpening
    tangent: np.ndarray           # D block at the solution
    branches: Optional[BranchFlags]
    state: CohesiveState          # committed history with time set to the evaluation instant


def _law_opening(zeta: np.ndarray, material: BulkMaterial) -> CrackOpening:
    return material_law.make_opening(float(zeta[0]), float(zeta[1]), material)


def _law_zeta(opening: CrackOpening, material: BulkMaterial) -> float:
    return material_law.effective_opening(max(opening.zeta_n, 0.0), opening.zeta_t, material.mode_mix_beta)


def solve_local_voigt(
    total_strain: np.ndarray,
    state: CohesiveState,
    segment: CrackSegment,
    material: BulkMaterial,
    agent: Optional[HealingAgent],
    time: float,
    controls: SolverControls = _DEFAULT_CONTROLS,
    elasticity: Optional[np.ndarray] = None,
) -> LocalSolution:
    """
    Newton solve of the 2x2 traction balance for the opening increment.

    Raises:
        LocalSolveError: when no consistent solution is found
    """
    C = elasticity_matrix(material) if elasticity is None else elasticity
    projection = segment_projection(segment)
    P = projection.matrix
    G = P.T @ C @ P
    l_c = segment.l_c
    state_t = state.evolve(time=time)
    zeta_prev = np.array([state.zeta_n, state.zeta_t])
    sigma_tr = C @ (total_strain - _enhanced_voigt(state.zeta_n, state.zeta_t, projection, l_c))
    driving = P.T @ sigma_tr
    tolerance = controls.local_tolerance_factor * material.tensile_strength
    divisor = controls.penalty_opening_divisor
    beta = material.mode_mix_beta
    report = LocalSolveReport()

    delta = np.zeros(2)
    if not zeta_prev.any():
        strength = material_law.opening_strength(state_t, material, agent)
        if strength > 0.0:
            normal_part = max(driving[0], 0.0)
            demand = np.hypot(normal_part, beta * driving[1])
            if demand <= strength:
                report.converged = True
                report.closed = True
                return LocalSolution(report, sigma_tr, CrackOpening(0.0, 0.0, 0.0),
                                     np.zeros((2, 2)), None, state_t)
            direction = np.array([normal_part, driving[1]]) / np.hypot(normal_part, driving[1])
            stiffness = float(direction @ G @ direction) / l_c
            guess = max((demand - strength) / stiffness,
                        1e-9 * material.fracture_energy / material.tensile_strength)
            delta = guess * direction

    def residual(trial: np.ndarray, branches: Optional[BranchFlags]) -> np.ndarray:
        opening = _law_opening(zeta_prev + trial, material)
        t_n, t_t, _ = material_law.equivalent_traction(opening, state_t, material, agent, branches, divisor)
        return driving - G @ trial / l_c - np.array([t_n, t_t])

    branches = None
    for sweep in range(controls.local_branch_sweeps):
        report.branch_sweeps = sweep + 1
        opening = _law_opening(zeta_prev + delta, material)
        branches = material_law.detect_branches(_law_zeta(opening, material), state_t)
        r = residual(delta, branches)
        r_norm = float(np.linalg.norm(r))
        for _ in range(controls.local_max_iterations):
            if r_norm <= tolerance:
                break
            opening = _law_opening(zeta_prev + delta, material)
            D = material_law.traction_tangent(opening, state_t, material, agent, branches, divisor)
            try:
                step = np.linalg.solve(G / l_c + D, r)
            except np.linalg.LinAlgError as exc:
                raise LocalSolveError(
                    f"singular local Jacobian in element {segment.element_id}",
                    element_id=segment.element_id,
                    report=report,
                ) from exc
            scale = 1.0
            for _ in range(controls.local_line_search_halvings + 1):
                candidate = delta + scale * step
                r_new = residual(candidate, branches)
                r_new_norm = float(np.linalg.norm(r_new))
                if r_new_norm < r_norm:
                    break
                scale *= 0.5
            delta, r, r_norm = candidate, r_new, r_new_norm
            report.iterations += 1
            logger.debug(f"local iteration {report.iterations}: |r|={r_norm:.3e}")
        opening = _law_opening(zeta_prev + delta, material)
        detected = material_law.detect_branches(_law_zeta(opening, material), state_t)
        if r_norm <= tolerance and detected == branches:
            break

    opening = _law_opening(zeta_prev + delta, material)
    final = residual(delta, None)
    report.delta_zeta_n, report.delta_zeta_t = float(delta[0]), float(delta[1])
    report.residual_norm = float(np.linalg.norm(final))
    report.converged = report.residual_norm <= tolerance
    if not report.converged:
        raise LocalSolveError(
            f"cohesive balance of element {segment.element_id} did not converge "
            f"(|r|={report.residual_norm:.3e} Pa after {report.iterations} iterations)",
            element_id=segment.element_id,
            report=report,
        )
    branches = material_law.detect_branches(_law_zeta(opening, material), state_t)
    D = material_law.traction_tangent(opening, state_t, material, agent, branches, divisor)
    stress = sigma_tr - C @ P @ delta / l_c
    return LocalSolution(report, stress, opening, D, branches, state_t)


def solve_local(
    total_strain: np.ndarray,
    state: CohesiveState,
    segment: CrackSegment,
    material: BulkMaterial,
    agent: Optional[HealingAgent],
    time: float,
    controls: SolverControls = _DEFAULT_CONTROLS,
) -> Tuple[LocalSolveReport, np.ndarray]:
    """
    Local traction balance for a 2x2 total strain tensor.

    Returns:
        (report, stress tensor)
    """
    solution = solve_local_voigt(strain_tensor_to_voigt(total_strain), state, segment,
                                 material, agent, time, controls)
    return solution.report, stress_voigt_to_tensor(solution.stress)


def elastoplastic_tangent(
    solution: LocalSolution,
    segment: CrackSegment,
    material: BulkMaterial,
    controls: SolverControls = _DEFAULT_CONTROLS,
    elasticity: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Condensed tangent C_ep = C - C [V1 V2] (G + l_c D)^-1 [V1; V2] C in Voigt form.

    An inactive (closed) crack returns C.
    """
    C = elasticity_matrix(material) if elasticity is None else elasticity
    if solution.report.closed:
        return C.copy()
    P = segment_projection(segment).matrix
    G = P.T @ C @ P
    M = G + segment.l_c * solution.tangent
    if not _well_conditioned(M):
        M = M + controls.tangent_regularization * np.trace(G) * np.eye(2)
        if not _well_conditioned(M):
            logger.warning(f"singular cohesive block in element {segment.element_id}; using elastic tangent")
            return C.copy()
    CP = C @ P
    return C - CP @ np.linalg.solve(M, CP.T)


def _well_conditioned(matrix: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(matrix))) and np.linalg.cond(matrix) < 1e14
