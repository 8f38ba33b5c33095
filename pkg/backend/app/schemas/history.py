from typing import List, Optional, Tuple

from pydantic import BaseModel, Field


class HistoryRow(BaseModel):
    """One converged step (SI units, time in h)."""
    step: int
    time_h: float
    load_factor: float
    reaction: float = Field(..., description="N")
    cmod: float = Field(..., description="m")
    control: float = Field(..., description="N for force control, m otherwise")
    phase: int = 0


class ReleaseRecord(BaseModel):
    element_id: int
    position: Tuple[float, float]
    release_time_h: float
    traction_at_release: float = Field(..., description="T_mx,r in Pa")
    contact_factor: float


class RunHistory(BaseModel):
    """Rows of a run plus the crack path polyline and completion flag."""
    scenario: str
    rows: List[HistoryRow] = Field(default_factory=list)
    crack_path: List[Tuple[float, float]] = Field(default_factory=list)
    releases: List[ReleaseRecord] = Field(default_factory=list)
    complete: bool = True
    failure: Optional[str] = None

    def curve(self, phase: Optional[int] = None) -> Tuple[List[float], List[float]]:
        """(CMOD, reaction) pairs, optionally restricted to one phase."""
        rows = [row for row in self.rows if phase is None or row.phase == phase]
        return [row.cmod for row in rows], [row.reaction for row in rows]
