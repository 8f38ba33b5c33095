"""
Q8 serendipity elements, global assembly and the global Newton iteration.

Uncracked elements are linear elastic with 3x3 Gauss integration and are kept
in a cached sparse matrix. Cracked elements use 2x2 Gauss integration plus a
constant enhanced strain whose opening comes from the element's cohesive
balance; their non-constant strain modes fade with the committed envelope.
They are re-evaluated at every iteration.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy.sparse.linalg import splu

from app.core.config import SolverControls
from app.core.errors import GeometryError, LocalSolveError, StepCutRequest
from app.models import CohesiveState, CrackSegment, DofSystem, GlobalState, Mesh
from app.schemas.material import BulkMaterial, HealingAgent
from app.schemas.program import ControlMode
from app.services import material_law, sda_kernel
from app.services.sda_kernel import LocalSolution

logger = logging.getLogger(__name__)

FULL_ORDER = 3
REDUCED_ORDER = 2

# Local coordinates of the eight nodes: corners counterclockwise, then mid-edge nodes.
NODE_LOCAL = np.array([
    [-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0],
    [0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0],
])


# ============================================================================
# ELEMENT
# ============================================================================

def shape_functions(xi: float, eta: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Serendipity shape functions and their local derivatives.

    Returns:
        (N of shape (8,), dN of shape (8, 2) with columns d/dxi, d/deta)
    """
    N = np.empty(8)
    dN = np.empty((8, 2))
    for a in range(4):
        xa, ea = NODE_LOCAL[a]
        s, t = 1.0 + xi * xa, 1.0 + eta * ea
        N[a] = 0.25 * s * t * (xi * xa + eta * ea - 1.0)
        dN[a, 0] = 0.25 * xa * t * (2.0 * xi * xa + eta * ea)
        dN[a, 1] = 0.25 * ea * s * (xi * xa + 2.0 * eta * ea)
    for a in range(4, 8):
        xa, ea = NODE_LOCAL[a]
        if xa == 0.0:
            N[a] = 0.5 * (1.0 - xi * xi) * (1.0 + eta * ea)
            dN[a, 0] = -xi * (1.0 + eta * ea)
            dN[a, 1] = 0.5 * ea * (1.0 - xi * xi)
        else:
            N[a] = 0.5 * (1.0 + xi * xa) * (1.0 - eta * eta)
            dN[a, 0] = 0.5 * xa * (1.0 - eta * eta)
            dN[a, 1] = -eta * (1.0 + xi * xa)
    return N, dN


def gauss_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tensor-product Gauss-Legendre points (k, 2) and weights (k,) on [-1, 1]^2."""
    points, weights = np.polynomial.legendre.leggauss(order)
    xi, eta = np.meshgrid(points, points, indexing="xy")
    w = np.outer(weights, weights)
    return np.column_stack((xi.ravel(), eta.ravel())), w.ravel()


def strain_displacement(coords: np.ndarray, xi: float, eta: float) -> Tuple[np.ndarray, float]:
    """
    Strain-displacement matrix at a local point.

    Args:
        coords: (8, 2) nodal coordinates
        xi, eta: Local coordinates

    Returns:
        (B of shape (3, 16) acting on [u1x, u1y, u2x, ...], Jacobian determinant)
    """
    _, dN = shape_functions(xi, eta)
    jacobian = dN.T @ coords
    det_j = float(np.linalg.det(jacobian))
    if det_j <= 0.0:
        raise GeometryError(f"non-positive Jacobian {det_j:.3e} at ({xi:.3f}, {eta:.3f})")
    dN_dx = dN @ np.linalg.inv(jacobian).T
    B = np.zeros((3, 16))
    B[0, 0::2] = dN_dx[:, 0]
    B[1, 1::2] = dN_dx[:, 1]
    B[2, 0::2] = dN_dx[:, 1]
    B[2, 1::2] = dN_dx[:, 0]
    return B, det_j


def local_coordinates(coords: np.ndarray, point: Sequence[float], max_iterations: int = 25) -> np.ndarray:
    """
    Local coordinates (xi, eta) of a physical point of an element.

    Raises:
        GeometryError: the isoparametric map cannot be inverted at the point
    """
    target = np.asarray(point, dtype=float)
    size = float(np.ptp(coords, axis=0).max())
    xi = np.zeros(2)
    for _ in range(max_iterations):
        N, dN = shape_functions(xi[0], xi[1])
        residual = N @ coords - target
        if np.linalg.norm(residual) <= 1e-12 * size:
            return np.clip(xi, -1.0, 1.0)
        try:
            xi = xi - np.linalg.solve((dN.T @ coords).T, residual)
        except np.linalg.LinAlgError as exc:
            raise GeometryError(f"singular element map at ({target[0]:.4g}, {target[1]:.4g})") from exc
    raise GeometryError(f"no local coordinates for ({target[0]:.4g}, {target[1]:.4g})")


@dataclass
class ElementMatrices:
    stiffness: np.ndarray     # (16, 16)
    mean_b: np.ndarray        # (3, 16) volume-averaged strain-displacement matrix
    volume: float
    higher_order: np.ndarray  # (16, 16) stiffness minus its constant-strain part


def element_matrices(coords: np.ndarray, elasticity: np.ndarray, thickness: float, order: int) -> ElementMatrices:
    points, weights = gauss_rule(order)
    stiffness = np.zeros((16, 16))
    b_sum = np.zeros((3, 16))
    volume = 0.0
    for (xi, eta), weight in zip(points, weights):
        B, det_j = strain_displacement(coords, xi, eta)
        dv = weight * det_j * thickness
        stiffness += dv * B.T @ elasticity @ B
        b_sum += dv * B
        volume += dv
    mean_b = b_sum / volume
    higher_order = stiffness - volume * mean_b.T @ elasticity @ mean_b
    return ElementMatrices(stiffness=stiffness, mean_b=mean_b, volume=volume, higher_order=higher_order)


def check_jacobians(mesh: Mesh, order: int = FULL_ORDER) -> List[int]:
    """Zero-based indices of elements with a non-positive Jacobian at any quadrature point."""
    points, _ = gauss_rule(order)
    inverted = []
    for element in range(mesh.n_elements):
        coords = mesh.element_coordinates(element)
        for xi, eta in points:
            _, dN = shape_functions(xi, eta)
            if np.linalg.det(dN.T @ coords) <= 0.0:
                inverted.append(element)
                break
    return inverted


def element_dof_map(mesh: Mesh) -> np.ndarray:
    """(n_elements, 16) global dofs ordered [u1x, u1y, u2x, u2y, ...]."""
    nodes = mesh.elements
    dofs = np.empty((mesh.n_elements, 16), dtype=int)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return dofs


# ============================================================================
# STRUCTURAL MODEL
# ============================================================================

@dataclass
class LoadPattern:
    """Reference nodal force vector for load factor 1 and the magnitude of its resultant (N)."""
    name: str
    vector: np.ndarray
    magnitude: float


@dataclass
class AssemblyResult:
    internal: np.ndarray
    stiffness: Optional[sp.csr_matrix]
    solutions: Dict[int, LocalSolution] = field(default_factory=dict)


def _cracked_element(
    element: int,
    u_e: np.ndarray,
    matrices: ElementMatrices,
    segment: CrackSegment,
    state: CohesiveState,
    material: BulkMaterial,
    agent: Optional[HealingAgent],
    time: float,
    controls: SolverControls,
    elasticity: np.ndarray,
    need_tangent: bool,
) -> Tuple[np.ndarray, Optional[np.ndarray], LocalSolution]:
    strain = matrices.mean_b @ u_e
    solution = sda_kernel.solve_local_voigt(strain, state, segment, material, agent, time, controls, elasticity)
    higher_order = higher_order_share(state, material, controls.higher_order_floor) * matrices.higher_order
    force = higher_order @ u_e + matrices.volume * matrices.mean_b.T @ solution.stress
    tangent = None
    if need_tangent:
        c_ep = sda_kernel.elastoplastic_tangent(solution, segment, material, controls, elasticity)
        tangent = higher_order + matrices.volume * matrices.mean_b.T @ c_ep @ matrices.mean_b
    return force, tangent, solution


def higher_order_share(state: CohesiveState, material: BulkMaterial, floor: float) -> float:
    """
    Factor on the non-constant strain modes of a cracked element.

    The constant opening only relaxes the mean strain, so the remaining modes
    would keep carrying elastic stress across an open crack. They follow the
    committed envelope T_mx / f_t of the original material, down to `floor`.
    """
    return min(1.0, max(floor, state.T_mx / material.tensile_strength))


class StructuralModel:
    """
    Mesh, material, supports and load patterns of one analysis.

    Cracked elements are listed in the GlobalState handed to each call; the
    model itself keeps only state-free, cached element data.
    """

    def __init__(
        self,
        mesh: Mesh,
        material: BulkMaterial,
        agent: Optional[HealingAgent] = None,
        constrained_dofs: Sequence[int] = (),
        patterns: Optional[Dict[str, np.ndarray]] = None,
        monitors: Optional[Dict[str, np.ndarray]] = None,
        cmod: Optional[np.ndarray] = None,
        controls: Optional[SolverControls] = None,
    ):
        self.mesh = mesh
        self.material = material
        self.agent = agent
        self.controls = controls or SolverControls.from_settings()
        self.elasticity = sda_kernel.elasticity_matrix(material)
        self.dofs = DofSystem.from_constraints(mesh.n_nodes, list(constrained_dofs))
        self.element_dofs = element_dof_map(mesh)
        self.patterns: Dict[str, LoadPattern] = {}
        for name, vector in (patterns or {}).items():
            self.add_pattern(name, vector)
        self.monitors: Dict[str, np.ndarray] = {name: np.asarray(v, dtype=float) for name, v in (monitors or {}).items()}
        self.cmod_vector = None if cmod is None else np.asarray(cmod, dtype=float)

        self._full = [
            element_matrices(mesh.element_coordinates(e), self.elasticity, mesh.thickness, FULL_ORDER)
            for e in range(mesh.n_elements)
        ]
        self._reduced: Dict[int, ElementMatrices] = {}
        self._elastic_key: Optional[Tuple[int, ...]] = None
        self._elastic_matrix: Optional[sp.csr_matrix] = None
        self.full_mean_b = np.stack([m.mean_b for m in self._full])
        self.volumes = np.array([m.volume for m in self._full])
        self.centroids = np.array([mesh.corner_coordinates(e).mean(axis=0) for e in range(mesh.n_elements)])
        logger.info(f"Model with {mesh.n_elements} elements and {self.dofs.n_dofs} dofs "
                    f"({len(self.dofs.free)} free)")

    # ------------------------------------------------------------------ loads

    def add_pattern(self, name: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=float)
        magnitude = float(np.hypot(vector[0::2].sum(), vector[1::2].sum()))
        if magnitude == 0.0:
            magnitude = float(np.linalg.norm(vector))
        self.patterns[name] = LoadPattern(name=name, vector=vector, magnitude=magnitude)

    def external_force(self, load_factors: Dict[str, float]) -> np.ndarray:
        force = np.zeros(self.dofs.n_dofs)
        for name in sorted(load_factors):
            force += load_factors[name] * self.patterns[name].vector
        return force

    def pattern_force(self, name: str, load_factors: Dict[str, float]) -> float:
        """Load carried by one pattern, lambda * |resultant| (N)."""
        return load_factors.get(name, 0.0) * self.patterns[name].magnitude

    def control_vector(self, mode: ControlMode, monitor: Optional[str] = None) -> np.ndarray:
        if mode == ControlMode.CMOD:
            if self.cmod_vector is None:
                raise ValueError("model has no CMOD node pair")
            return self.cmod_vector
        if mode == ControlMode.DISPLACEMENT:
            return self.monitors[monitor]
        raise ValueError("force control has no displacement measure")

    def cmod(self, u: np.ndarray) -> float:
        return float(self.cmod_vector @ u) if self.cmod_vector is not None else 0.0

    # ---------------------------------------------------------------- element data

    def reduced_matrices(self, element: int) -> ElementMatrices:
        if element not in self._reduced:
            self._reduced[element] = element_matrices(
                self.mesh.element_coordinates(element), self.elasticity, self.mesh.thickness, REDUCED_ORDER
            )
        return self._reduced[element]

    def _elastic_part(self, cracked: Tuple[int, ...]) -> sp.csr_matrix:
        if self._elastic_key != cracked:
            mask = np.ones(self.mesh.n_elements, dtype=bool)
            mask[list(cracked)] = False
            dofs = self.element_dofs[mask]
            data = np.stack([self._full[e].stiffness for e in np.flatnonzero(mask)]) if mask.any() else np.zeros((0, 16, 16))
            self._elastic_matrix = _scatter(dofs, data, self.dofs.n_dofs)
            self._elastic_key = cracked
            logger.debug(f"Rebuilt elastic stiffness without {len(cracked)} cracked elements")
        return self._elastic_matrix

    # ---------------------------------------------------------------- assembly

    def assemble(self, u: np.ndarray, state: GlobalState, time: float, need_tangent: bool = True) -> AssemblyResult:
        """
        Internal force and tangent stiffness at displacement u.

        Raises:
            StepCutRequest: a cohesive balance failed
        """
        cracked = tuple(sorted(state.segments))
        elastic = self._elastic_part(cracked)
        internal = elastic @ u
        jobs = [
            (e, u[self.element_dofs[e]], self.reduced_matrices(e), state.segments[e], state.cohesive[e])
            for e in cracked
        ]
        try:
            if self.controls.assembly_threads > 1 and len(jobs) > 1:
                results = Parallel(n_jobs=self.controls.assembly_threads, prefer="threads")(
                    delayed(_cracked_element)(e, u_e, matrices, segment, cohesive, self.material, self.agent,
                                              time, self.controls, self.elasticity, need_tangent)
                    for e, u_e, matrices, segment, cohesive in jobs
                )
            else:
                results = [
                    _cracked_element(e, u_e, matrices, segment, cohesive, self.material, self.agent,
                                     time, self.controls, self.elasticity, need_tangent)
                    for e, u_e, matrices, segment, cohesive in jobs
                ]
        except LocalSolveError as exc:
            raise StepCutRequest(str(exc)) from exc

        solutions = {}
        tangents = []
        for (e, *_), (force, tangent, solution) in zip(jobs, results):
            np.add.at(internal, self.element_dofs[e], force)
            solutions[e] = solution
            tangents.append(tangent)

        stiffness = None
        if need_tangent:
            stiffness = elastic
            if cracked:
                stiffness = elastic + _scatter(self.element_dofs[list(cracked)], np.stack(tangents), self.dofs.n_dofs)
        return AssemblyResult(internal=internal, stiffness=stiffness, solutions=solutions)

    def element_stresses(self, u: np.ndarray, solutions: Optional[Dict[int, LocalSolution]] = None) -> np.ndarray:
        """(n_elements, 3) volume-averaged Voigt stresses; cracked elements report their balanced stress."""
        strains = np.einsum("eij,ej->ei", self.full_mean_b, u[self.element_dofs])
        stresses = strains @ self.elasticity.T
        for e, solution in (solutions or {}).items():
            stresses[e] = solution.stress
        return stresses

    def point_stress(self, element: int, point: Sequence[float], u: np.ndarray) -> np.ndarray:
        """Voigt stress of an uncracked element sampled at a point of its closure."""
        coords = self.mesh.element_coordinates(element)
        xi, eta = local_coordinates(coords, point)
        B, _ = strain_displacement(coords, xi, eta)
        return self.elasticity @ (B @ u[self.element_dofs[element]])

    def reactions(self, internal: np.ndarray) -> np.ndarray:
        return internal[self.dofs.constrained]

    # ---------------------------------------------------------------- linear solve

    def solve(self, stiffness: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
        """Direct sparse solve on the free dofs; rhs may hold several columns."""
        free = self.dofs.free
        rhs = np.asarray(rhs, dtype=float)
        reduced = stiffness[free][:, free].tocsc()
        try:
            factor = splu(reduced)
        except RuntimeError as exc:
            raise StepCutRequest(f"singular stiffness matrix: {exc}") from exc
        solution = np.zeros_like(rhs)
        solution[free] = factor.solve(rhs[free])
        if not np.all(np.isfinite(solution)):
            raise StepCutRequest("non-finite displacement correction")
        return solution


def _scatter(dofs: np.ndarray, data: np.ndarray, n_dofs: int) -> sp.csr_matrix:
    rows = np.repeat(dofs, 16, axis=1).ravel()
    cols = np.tile(dofs, (1, 16)).ravel()
    return sp.coo_matrix((data.ravel(), (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()


def assemble(model: StructuralModel, state: GlobalState, time: Optional[float] = None) -> Tuple[np.ndarray, sp.csr_matrix]:
    """Residual f_ext - f_int and tangent stiffness at the displacements of `state`."""
    result = model.assemble(state.u, state, state.time if time is None else time)
    residual = model.external_force(state.load_factors) - result.internal
    residual[model.dofs.constrained] = 0.0
    return residual, result.stiffness


# ============================================================================
# GLOBAL NEWTON
# ============================================================================

@dataclass
class StepIncrement:
    """
    One mechanical step.

    Force control prescribes the final `load_factor` of `pattern`. Indirect
    control prescribes `control @ u == target` and solves for the factor.
    """
    pattern: str
    mode: ControlMode
    time: float
    load_factor: Optional[float] = None
    control: Optional[np.ndarray] = None
    target: float = 0.0


@dataclass
class ConvergenceReport:
    iterations: int = 0
    residual_norm: float = 0.0
    reference: float = 0.0
    correction_norm: float = 0.0
    converged: bool = False


@dataclass
class StepResult:
    state: GlobalState
    report: ConvergenceReport
    solutions: Dict[int, LocalSolution]
    stresses: np.ndarray


def newton_step(model: StructuralModel, state: GlobalState, increment: StepIncrement) -> StepResult:
    """
    Solve one load step and commit the cohesive history on convergence.

    Args:
        model: Structural model
        state: Last converged state (with any freshly embedded segments)
        increment: Prescribed load factor or displacement target

    Returns:
        StepResult with the committed state

    Raises:
        StepCutRequest: divergence, a failed cohesive balance or a singular system
    """
    controls = model.controls
    free = model.dofs.free
    u = state.u.copy()
    factors = dict(state.load_factors)
    factors.setdefault(increment.pattern, 0.0)
    if increment.mode == ControlMode.FORCE:
        factors[increment.pattern] = increment.load_factor
    reference_vector = model.patterns[increment.pattern].vector
    report = ConvergenceReport()
    correction = np.zeros_like(u)

    for iteration in range(controls.global_max_iterations + 1):
        result = model.assemble(u, state, increment.time)
        external = model.external_force(factors)
        residual = (external - result.internal)[free]
        report.residual_norm = float(np.linalg.norm(residual))
        report.reference = max(float(np.linalg.norm(external[free])), state.peak_reaction, 1e-30)
        report.correction_norm = float(np.linalg.norm(correction))
        if not np.isfinite(report.residual_norm):
            raise StepCutRequest("non-finite residual")
        if iteration > 0:
            tight = report.residual_norm <= 1e-3 * controls.global_tol_r * report.reference
            both = (report.residual_norm <= controls.global_tol_r * report.reference
                    and report.correction_norm <= controls.global_tol_u * max(float(np.linalg.norm(u)), 1e-30))
            if tight or both:
                report.converged = True
                break
        if iteration == controls.global_max_iterations:
            break

        full_residual = external - result.internal
        if increment.mode == ControlMode.FORCE:
            correction = model.solve(result.stiffness, full_residual)
        else:
            pair = model.solve(result.stiffness, np.column_stack((full_residual, reference_vector)))
            du_r, du_f = pair[:, 0], pair[:, 1]
            c = increment.control
            sensitivity = float(c @ du_f)
            if abs(sensitivity) < 1e-300:
                raise StepCutRequest("controlled quantity does not respond to the load pattern")
            delta_lambda = (increment.target - float(c @ u) - float(c @ du_r)) / sensitivity
            factors[increment.pattern] += delta_lambda
            correction = du_r + delta_lambda * du_f
        u = u + correction
        report.iterations = iteration + 1
        logger.debug(f"global iteration {report.iterations}: |r|={report.residual_norm:.3e} "
                     f"ref={report.reference:.3e} lambda={factors[increment.pattern]:.6g}")

    if not report.converged:
        raise StepCutRequest(
            f"global Newton did not converge in {controls.global_max_iterations} iterations "
            f"(|r|={report.residual_norm:.3e}, ref={report.reference:.3e})"
        )

    committed = dict(state.cohesive)
    for element, solution in result.solutions.items():
        committed[element] = material_law.commit_state(
            solution.opening, state.cohesive[element], increment.time, model.material, model.agent
        )
    reaction = float(np.linalg.norm(model.reactions(result.internal)))
    new_state = GlobalState(
        u=u,
        load_factors=factors,
        cohesive=committed,
        segments=dict(state.segments),
        time=increment.time,
        step=state.step + 1,
        peak_reaction=max(state.peak_reaction, reaction),
    )
    stresses = model.element_stresses(u, result.solutions)
    return StepResult(state=new_state, report=report, solutions=result.solutions, stresses=stresses)
