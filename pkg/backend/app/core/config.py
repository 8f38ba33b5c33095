import os
from pathlib import Path

from pydantic import BaseModel
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

load_dotenv()

BACKEND_DIR = Path(__file__).resolve().parents[2]


class Settings(BaseSettings):
    APP_NAME: str = "HealFrac"
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # API configuration
    API_PREFIX: str = "/api"
    BACKEND_CORS_ORIGINS: list = ["http://localhost:3000"]

    # Bundled scenarios
    SCENARIO_DIR: str = str(BACKEND_DIR / "scenarios")

    # Local (cohesive point) Newton controls
    LOCAL_TOLERANCE_FACTOR: float = 1e-10
    LOCAL_MAX_ITERATIONS: int = 50
    LOCAL_LINE_SEARCH_HALVINGS: int = 10
    LOCAL_BRANCH_SWEEPS: int = 5
    PENALTY_OPENING_DIVISOR: float = 50.0
    TANGENT_REGULARIZATION: float = 1e-12

    # Global Newton and step control
    GLOBAL_TOL_R: float = 1e-6
    GLOBAL_TOL_U: float = 1e-8
    GLOBAL_MAX_ITERATIONS: int = 30
    MAX_STEP_CUTS: int = 8
    MAX_CRACK_UPDATES_PER_STEP: int = 20
    ASSEMBLY_THREADS: int = 1

    # Share of the higher-order element stiffness kept across a fully softened crack
    HIGHER_ORDER_FLOOR: float = 1e-2

    # Back analysis
    FIT_GRID_POINTS: int = 8
    FIT_REFINEMENT_BUDGET: int = 86
    FIT_RESTART_PERTURBATION: float = 0.15

    class Config:
        case_sensitive = True


settings = Settings()


def _setting(name: str):
    return Settings.model_fields[name].default


class SolverControls(BaseModel):
    """
    Numerical controls handed explicitly to the solver services.

    Every field mirrors the upper-case Settings entry of the same name, which
    also provides its default.
    """
    local_tolerance_factor: float = _setting("LOCAL_TOLERANCE_FACTOR")
    local_max_iterations: int = _setting("LOCAL_MAX_ITERATIONS")
    local_line_search_halvings: int = _setting("LOCAL_LINE_SEARCH_HALVINGS")
    local_branch_sweeps: int = _setting("LOCAL_BRANCH_SWEEPS")
    penalty_opening_divisor: float = _setting("PENALTY_OPENING_DIVISOR")
    tangent_regularization: float = _setting("TANGENT_REGULARIZATION")
    global_tol_r: float = _setting("GLOBAL_TOL_R")
    global_tol_u: float = _setting("GLOBAL_TOL_U")
    global_max_iterations: int = _setting("GLOBAL_MAX_ITERATIONS")
    max_step_cuts: int = _setting("MAX_STEP_CUTS")
    max_crack_updates_per_step: int = _setting("MAX_CRACK_UPDATES_PER_STEP")
    assembly_threads: int = _setting("ASSEMBLY_THREADS")
    higher_order_floor: float = _setting("HIGHER_ORDER_FLOOR")

    @classmethod
    def from_settings(cls, source: Settings = settings) -> "SolverControls":
        return cls(**{name: getattr(source, name.upper()) for name in cls.model_fields})
