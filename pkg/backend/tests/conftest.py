import numpy as np
import pytest

from app.core.config import SolverControls
from app.data_import import mesher
from app.models import CohesiveState, Mesh
from app.schemas.material import BulkMaterial, HealingAgent

MPA = 1e6


@pytest.fixture
def material() -> BulkMaterial:
    return BulkMaterial(young_modulus=30e3 * MPA, poisson_ratio=0.2, tensile_strength=3.0 * MPA,
                        fracture_energy=100.0)


@pytest.fixture
def agent() -> HealingAgent:
    return HealingAgent(ultimate_strength=0.7 * MPA, ultimate_fracture_energy=42.0, healing_rate=0.096,
                        release_threshold=1.5 * MPA, contact_exponent=2.0)


@pytest.fixture
def controls() -> SolverControls:
    return SolverControls()


@pytest.fixture
def virgin(material) -> CohesiveState:
    return CohesiveState.virgin(material.tensile_strength)


@pytest.fixture
def unit_square() -> Mesh:
    """One Q8 element on [0, 1]^2 (m)."""
    nodes = np.array([
        [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0],
        [0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5],
    ])
    return Mesh(nodes=nodes, elements=np.arange(8).reshape(1, 8), thickness=1.0)


@pytest.fixture
def strip() -> Mesh:
    """Three Q8 elements in a row on [0, 0.3] x [0, 0.1]."""
    return mesher.structured_mesh(np.linspace(0.0, 0.3, 4), np.array([0.0, 0.1]), thickness=0.05)


@pytest.fixture
def small_beam() -> Mesh:
    return mesher.bending_beam(columns=11, rows=4)
