from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from app.schemas.material import BulkMaterial, HealingAgent


class LawCurveRequest(BaseModel):
    """Sampling of the traction law of one point over a range of effective openings (SI units)."""
    material: BulkMaterial
    agent: Optional[HealingAgent] = None
    rest_time_h: float = Field(0.0, ge=0, description="Time since release, h")
    max_opening: Optional[float] = Field(None, gt=0, description="m; defaults to 5 G_f / f_t")
    points: int = Field(101, ge=2, le=5001)
    zeta_mx: float = Field(0.0, ge=0, description="Largest opening reached so far, m")
    zeta_hx: float = Field(0.0, ge=0, description="Largest opening since release, m")
    traction_at_release: Optional[float] = Field(
        None, gt=0, description="T_mx,r in Pa; defaults to the envelope value at zeta_mx"
    )

    @model_validator(mode="after")
    def _check_history(self) -> "LawCurveRequest":
        if self.zeta_hx > 0 and self.agent is None:
            raise ValueError("zeta_hx needs a healing agent")
        return self


class LawCurve(BaseModel):
    zeta: List[float] = Field(..., description="m")
    original: List[float] = Field(..., description="T, Pa")
    healed: List[float] = Field(..., description="alpha H, Pa")
    equivalent: List[float] = Field(..., description="T_eq, Pa")
    released: bool
    contact_factor: float
    healing_degree: float
