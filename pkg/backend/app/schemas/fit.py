from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

FITTABLE = ("ultimate_strength", "ultimate_fracture_energy", "healing_rate",
            "release_threshold", "contact_exponent")


class MeasuredCurve(BaseModel):
    """Measured reload curve: CMOD in m, force in N."""
    cmod: List[float]
    force: List[float]

    @model_validator(mode="after")
    def _check_samples(self) -> "MeasuredCurve":
        if len(self.cmod) != len(self.force):
            raise ValueError("cmod and force columns differ in length")
        if len(self.cmod) < 5:
            raise ValueError("a measured curve needs at least 5 samples")
        if any(b <= a for a, b in zip(self.cmod, self.cmod[1:])):
            raise ValueError("measured CMOD must be strictly increasing")
        return self


class FitParameter(BaseModel):
    name: str
    lower: float = Field(..., gt=0)
    upper: float = Field(..., gt=0)

    @field_validator("name")
    @classmethod
    def _known(cls, value: str) -> str:
        if value not in FITTABLE:
            raise ValueError(f"unknown healing parameter '{value}'")
        return value

    @model_validator(mode="after")
    def _ordered(self) -> "FitParameter":
        if not self.lower < self.upper:
            raise ValueError(f"bounds of '{self.name}' are not ordered")
        return self


def default_free_parameters() -> List[FitParameter]:
    return [
        FitParameter(name="ultimate_strength", lower=0.05e6, upper=3.0e6),
        FitParameter(name="ultimate_fracture_energy", lower=5.0, upper=200.0),
    ]


class FitSpec(BaseModel):
    free: List[FitParameter] = Field(default_factory=default_free_parameters, min_length=1)
    fixed: Dict[str, float] = Field(default_factory=dict)
    grid_points: int = Field(8, ge=1)
    max_evaluations: int = Field(86, ge=0, description="Budget of the simplex refinement stage")
    restart: bool = True
    restart_perturbation: float = Field(0.15, gt=0)
    ensemble: List[str] = Field(default_factory=list, description="Scenario variants averaged in the misfit")
    n_jobs: int = 1


class EvaluationRecord(BaseModel):
    index: int
    stage: str
    params: Dict[str, float]
    misfit: float
    failed: bool = False


class FitResult(BaseModel):
    params: Dict[str, float]
    misfit: float
    converged: bool
    evaluations: List[EvaluationRecord]
    message: Optional[str] = None
