from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class PlaneMode(str, Enum):
    """Two-dimensional idealization of the bulk."""
    PLANE_STRESS = "plane_stress"
    PLANE_STRAIN = "plane_strain"


class BulkMaterial(BaseModel):
    """Elastic constants plus the cohesive softening parameters of the virgin material (SI units)."""
    model_config = ConfigDict(frozen=True)

    young_modulus: float = Field(..., gt=0, description="Pa")
    poisson_ratio: float = Field(..., ge=0, lt=0.5)
    tensile_strength: float = Field(..., gt=0, description="f_t, Pa")
    fracture_energy: float = Field(..., gt=0, description="G_f, N/m")
    mode_mix_beta: float = Field(1.0, ge=0, description="Mode II weight in the effective opening")
    plane_mode: PlaneMode = PlaneMode.PLANE_STRESS

    @property
    def softening_slope(self) -> float:
        """f_t / G_f, the exponent rate of the softening envelope (1/m)."""
        return self.tensile_strength / self.fracture_energy


class HealingAgent(BaseModel):
    """The five healing parameters (SI units, time in hours)."""
    model_config = ConfigDict(frozen=True)

    ultimate_strength: float = Field(..., gt=0, description="f_h,inf, Pa")
    ultimate_fracture_energy: float = Field(..., gt=0, description="G_h,inf, N/m")
    healing_rate: float = Field(..., gt=0, description="A_h, 1/h")
    release_threshold: float = Field(..., gt=0, description="T_0, Pa")
    contact_exponent: float = Field(..., gt=0, description="b")

    @property
    def softening_slope(self) -> float:
        return self.ultimate_strength / self.ultimate_fracture_energy

    def check_pairing(self, material: BulkMaterial) -> None:
        """Raise ValueError when the release threshold exceeds the bulk tensile strength."""
        if self.release_threshold > material.tensile_strength:
            raise ValueError(
                f"release threshold {self.release_threshold:.6g} Pa exceeds "
                f"tensile strength {material.tensile_strength:.6g} Pa"
            )
