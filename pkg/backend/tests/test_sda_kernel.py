import math

import numpy as np
import pytest

from app.core.config import SolverControls
from app.core.errors import GeometryError, LocalSolveError
from app.models import CohesiveState, Mesh
from app.services import material_law, sda_kernel
from app.services.crack_engine import embed

MPA = 1e6
SIZE = 0.01


@pytest.fixture
def small_square() -> Mesh:
    nodes = SIZE * np.array([
        [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0],
        [0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5],
    ])
    return Mesh(nodes=nodes, elements=np.arange(8).reshape(1, 8))


@pytest.fixture
def vertical_crack(small_square):
    return embed(small_square, 0, (0.5 * SIZE, 0.0), (0.5 * SIZE, SIZE))


def local_stress(strain, state, segment, material, agent=None, time=0.0):
    return sda_kernel.solve_local_voigt(np.asarray(strain), state, segment, material, agent, time)


class TestProjections:
    def test_voigt_round_trip(self):
        tensor = np.array([[1.0, 0.25], [0.25, -2.0]])
        assert np.allclose(sda_kernel.strain_voigt_to_tensor(sda_kernel.strain_tensor_to_voigt(tensor)), tensor)
        assert np.allclose(sda_kernel.stress_voigt_to_tensor(sda_kernel.stress_tensor_to_voigt(tensor)), tensor)

    def test_projection_of_a_horizontal_normal(self):
        pair = sda_kernel.projection_pair((1.0, 0.0))
        assert np.allclose(pair.v1, [1.0, 0.0, 0.0])
        assert np.allclose(pair.v2, [0.0, 0.0, 1.0])

    def test_projections_extract_normal_and_shear_traction(self):
        normal = np.array([math.cos(0.3), math.sin(0.3)])
        pair = sda_kernel.projection_pair(normal)
        stress = np.array([[2.0, 0.5], [0.5, -1.0]])
        voigt = sda_kernel.stress_tensor_to_voigt(stress)
        tangent = sda_kernel.tangent_of(normal)
        assert pair.v1 @ voigt == pytest.approx(normal @ stress @ normal)
        assert pair.v2 @ voigt == pytest.approx(tangent @ stress @ normal)

    def test_plane_strain_is_stiffer(self, material):
        strain_mode = material.model_copy(update={"plane_mode": "plane_strain"})
        assert sda_kernel.elasticity_matrix(strain_mode)[0, 0] > sda_kernel.elasticity_matrix(material)[0, 0]


class TestGeometry:
    def test_characteristic_length_of_a_straight_crack(self, small_square, vertical_crack):
        assert vertical_crack.l_c == pytest.approx(SIZE)
        assert vertical_crack.normal == pytest.approx((1.0, 0.0))

    def test_characteristic_length_of_a_diagonal_crack(self, small_square):
        normal = np.array([1.0, 1.0]) / math.sqrt(2.0)
        l_c = sda_kernel.characteristic_length(small_square.element_coordinates(0), normal)
        assert l_c == pytest.approx(SIZE / math.sqrt(2.0))

    def test_clockwise_element_is_rejected(self, small_square):
        corners = small_square.corner_coordinates(0)[::-1]
        with pytest.raises(GeometryError):
            sda_kernel.characteristic_length(corners, (1.0, 0.0))

    def test_polygon_helpers(self):
        square = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
        assert sda_kernel.polygon_area(square) == pytest.approx(2.0)
        assert np.allclose(sda_kernel.polygon_centroid(square), [1.0, 0.5])
        hits = sda_kernel.line_polygon_intersections((1.0, 0.5), (1.0, 0.0), square)
        assert [round(s, 12) for s, _, _ in hits] == [-1.0, 1.0]

    def test_enhanced_strain(self, vertical_crack):
        strain = sda_kernel.enhanced_strain(1e-6, 2e-6, vertical_crack)
        assert np.allclose(strain, np.array([[1e-6, 1e-6], [1e-6, 0.0]]) / SIZE)


CRACKED_SAMPLES = 50


def sampled_cracked_states(material, agent, segment, count=CRACKED_SAMPLES, seed=11):
    """
    Committed states and strains whose balance is open and clear of the branch,
    contact and closing kinks, so central differences stay on one branch.
    """
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(100 * count):
        if len(cases) == count:
            break
        law_agent = agent if rng.random() < 0.7 else None
        first = np.array([rng.uniform(1.5e-4, 4e-3), rng.uniform(-1e-4, 1e-4), rng.uniform(-5e-4, 5e-4)])
        virgin = CohesiveState.virgin(material.tensile_strength)
        try:
            opened = local_stress(first, virgin, segment, material, law_agent)
        except LocalSolveError:
            continue
        state = material_law.commit_state(opened.opening, virgin, 0.0, material, law_agent)
        strain = first * rng.uniform(0.3, 1.5) + rng.uniform(-5e-5, 5e-5, 3)
        time = rng.uniform(0.0, 48.0)
        try:
            solution = local_stress(strain, state, segment, material, law_agent, time)
        except LocalSolveError:
            continue
        zeta = material_law.effective_opening(max(solution.opening.zeta_n, 0.0), solution.opening.zeta_t,
                                              material.mode_mix_beta)
        if solution.report.closed or zeta == 0.0:
            continue
        if abs(zeta - state.zeta_mx) < 1e-3 * state.zeta_mx or abs(solution.opening.zeta_n) < 1e-2 * zeta:
            continue
        if state.released and state.zeta_hx > 0.0 and abs(zeta - state.zeta_hx) < 1e-3 * state.zeta_hx:
            continue
        cases.append((state, strain, time, law_agent))
    assert len(cases) == count
    return cases


class TestLocalBalance:
    def test_below_strength_the_crack_stays_closed(self, material, virgin, vertical_crack):
        strain = np.array([5e-5, 0.0, 0.0])
        solution = local_stress(strain, virgin, vertical_crack, material)
        assert solution.report.closed
        assert solution.opening.zeta == 0.0
        assert np.allclose(solution.stress, sda_kernel.elasticity_matrix(material) @ strain)

    def test_traction_continuity_after_opening(self, material, virgin, vertical_crack):
        solution = local_stress([2e-4, 0.0, 3e-5], virgin, vertical_crack, material)
        assert solution.report.converged and not solution.report.closed
        t_n, t_t, _ = material_law.equivalent_traction(solution.opening, solution.state, material)
        tolerance = 1e-8 * material.tensile_strength
        assert solution.stress[0] == pytest.approx(t_n, abs=tolerance)
        assert solution.stress[2] == pytest.approx(t_t, abs=tolerance)
        assert solution.opening.zeta_n > 0.0

    def test_trial_stress_of_a_virgin_point_is_elastic(self, material, virgin, vertical_crack):
        strain = np.array([[1e-4, 2e-5], [2e-5, -3e-5]])
        expected = sda_kernel.elasticity_matrix(material) @ sda_kernel.strain_tensor_to_voigt(strain)
        stress = sda_kernel.trial_stress(strain, virgin, vertical_crack, material)
        assert np.allclose(sda_kernel.stress_tensor_to_voigt(stress), expected)

    def test_tensor_interface_matches_voigt(self, material, virgin, vertical_crack):
        voigt = np.array([2e-4, 1e-5, 4e-5])
        report, stress = sda_kernel.solve_local(sda_kernel.strain_voigt_to_tensor(voigt), virgin,
                                                vertical_crack, material, None, 0.0)
        assert report.converged
        expected = local_stress(voigt, virgin, vertical_crack, material).stress
        assert np.allclose(sda_kernel.stress_tensor_to_voigt(stress), expected)

    def test_compression_of_an_open_crack_hits_the_penalty(self, material, virgin, vertical_crack):
        opened = local_stress([2e-4, 0.0, 0.0], virgin, vertical_crack, material)
        state = material_law.commit_state(opened.opening, virgin, 0.0, material)
        closed = local_stress([-1e-4, 0.0, 0.0], state, vertical_crack, material)
        assert closed.report.converged
        assert closed.opening.zeta_n < 0.0
        assert closed.stress[0] < 0.0

    def test_failure_raises_local_solve_error(self, material, virgin, vertical_crack):
        controls = SolverControls(local_max_iterations=0, local_branch_sweeps=1)
        with pytest.raises(LocalSolveError) as caught:
            sda_kernel.solve_local_voigt(np.array([2e-4, 0.0, 0.0]), virgin, vertical_crack, material,
                                         None, 0.0, controls)
        assert caught.value.element_id == 0
        assert not caught.value.report.converged


class TestTangent:
    def test_closed_crack_keeps_the_elastic_tangent(self, material, virgin, vertical_crack):
        solution = local_stress([1e-5, 0.0, 0.0], virgin, vertical_crack, material)
        tangent = sda_kernel.elastoplastic_tangent(solution, vertical_crack, material)
        assert np.allclose(tangent, sda_kernel.elasticity_matrix(material))

    def test_matches_finite_differences(self, material, agent, vertical_crack):
        step = 1e-8
        for state, strain, time, law_agent in sampled_cracked_states(material, agent, vertical_crack):
            solution = local_stress(strain, state, vertical_crack, material, law_agent, time)
            tangent = sda_kernel.elastoplastic_tangent(solution, vertical_crack, material)
            numeric = np.zeros((3, 3))
            for j in range(3):
                shift = np.zeros(3)
                shift[j] = step
                plus = local_stress(strain + shift, state, vertical_crack, material, law_agent, time).stress
                minus = local_stress(strain - shift, state, vertical_crack, material, law_agent, time).stress
                numeric[:, j] = (plus - minus) / (2.0 * step)
            assert np.allclose(tangent, numeric, rtol=1e-4, atol=1e-4 * np.abs(numeric).max())

    def test_is_symmetric(self, material, virgin, vertical_crack):
        solution = local_stress([2e-4, 0.0, 3e-5], virgin, vertical_crack, material)
        tangent = sda_kernel.elastoplastic_tangent(solution, vertical_crack, material)
        assert np.allclose(tangent, tangent.T, rtol=1e-10, atol=1e-6 * np.abs(tangent).max())

    def test_softening_reduces_the_normal_stiffness(self, material, virgin, vertical_crack):
        solution = local_stress([2e-4, 0.0, 0.0], virgin, vertical_crack, material)
        tangent = sda_kernel.elastoplastic_tangent(solution, vertical_crack, material)
        assert tangent[0, 0] < sda_kernel.elasticity_matrix(material)[0, 0]


@pytest.mark.parametrize("size", [0.01, 0.02, 0.04, 0.08])
def test_tearing_dissipates_the_fracture_energy_for_any_element_size(material, size):
    bulk = material.model_copy(update={"poisson_ratio": 0.0})
    nodes = size * np.array([
        [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0],
        [0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5],
    ])
    segment = embed(Mesh(nodes=nodes, elements=np.arange(8).reshape(1, 8)), 0, (0.5 * size, 0.0), (0.5 * size, size))
    final_opening = 10.0 * bulk.fracture_energy / bulk.tensile_strength
    strains = np.linspace(0.0, final_opening / segment.l_c + bulk.tensile_strength / bulk.young_modulus, 4001)

    state = CohesiveState.virgin(bulk.tensile_strength)
    stresses = []
    for strain in strains:
        solution = local_stress([strain, 0.0, 0.0], state, segment, bulk)
        state = material_law.commit_state(solution.opening, state, 0.0, bulk, None)
        stresses.append(solution.stress[0])
    work_per_volume = np.trapezoid(stresses, strains)
    assert segment.l_c * work_per_volume == pytest.approx(bulk.fracture_energy, rel=1e-2)
