from fastapi import APIRouter, HTTPException

from app.core.errors import ConfigurationError, MeshFormatError, ScenarioError
from app.data_import.scenario_loader import bundled_scenario_path, list_scenarios, list_variants
from app.schemas.history import RunHistory
from app.schemas.scenario import ScenarioRunRequest
from app.services.simulation_service import SimulationService

router = APIRouter()


@router.get("")
def get_scenarios():
    """Bundled scenarios and their variants."""
    return [
        {"name": name, "variants": list_variants(bundled_scenario_path(name))}
        for name in list_scenarios()
    ]


@router.post("/{name}/run", response_model=RunHistory)
def run_scenario(name: str, request: ScenarioRunRequest):
    """
    Run a bundled scenario; a solver failure returns the partial history with complete = false.
    """
    service = SimulationService()
    try:
        path = bundled_scenario_path(name)
    except ScenarioError as exc:
        raise HTTPException(status_code=404, detail=str(exc))
    try:
        scenario = service.load(path, request.variant, request.overrides, healing=request.healing)
        return service.run(scenario).history
    except (ScenarioError, MeshFormatError, ConfigurationError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
