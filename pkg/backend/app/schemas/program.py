from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class ControlMode(str, Enum):
    FORCE = "force"
    DISPLACEMENT = "displacement"
    CMOD = "cmod"


class StopKind(str, Enum):
    REACH_VALUE = "reach_value"      # controlled quantity reaches `target`
    REACH_CMOD = "reach_cmod"        # CMOD reaches `target` (any control mode)
    ZERO_LOAD = "zero_load"          # load factor of the pattern returns to zero
    STEPS = "steps"                  # fixed number of steps


class ControlSpec(BaseModel):
    """
    One phase of a load program.

    Increments are in N for force control and in m for displacement/CMOD control.
    A rest phase has a zero increment and a positive step time.
    """
    name: str = "phase"
    mode: ControlMode = ControlMode.FORCE
    pattern: str = Field(..., description="Load pattern whose factor this phase drives")
    monitor: Optional[str] = Field(None, description="Monitored dof for displacement control")
    increment: float = 0.0
    step_time: float = Field(0.0, ge=0, description="Elapsed time per step, h")
    stop: StopKind = StopKind.STEPS
    target: Optional[float] = None
    steps: Optional[int] = Field(None, ge=1)
    max_steps: int = Field(2000, ge=1)
    release_at_end: bool = False

    @property
    def is_rest(self) -> bool:
        return self.increment == 0.0

    @model_validator(mode="after")
    def _check_consistency(self) -> "ControlSpec":
        if self.is_rest:
            if self.step_time <= 0:
                raise ValueError(f"rest phase '{self.name}' needs a positive step time")
            if self.stop != StopKind.STEPS:
                raise ValueError(f"rest phase '{self.name}' must stop after a step count")
        if self.stop == StopKind.STEPS and self.steps is None:
            raise ValueError(f"phase '{self.name}' stops after steps but gives no step count")
        if self.stop in (StopKind.REACH_VALUE, StopKind.REACH_CMOD) and self.target is None:
            raise ValueError(f"phase '{self.name}' needs a target value")
        if self.mode == ControlMode.DISPLACEMENT and not self.is_rest and self.monitor is None:
            raise ValueError(f"displacement-controlled phase '{self.name}' needs a monitor")
        return self


class LoadProgram(BaseModel):
    """Ordered stepping schedule."""
    phases: List[ControlSpec] = Field(..., min_length=1)

    @property
    def reload_phase_index(self) -> int:
        """Index of the last non-rest phase (the reload in healing protocols)."""
        for index in range(len(self.phases) - 1, -1, -1):
            if not self.phases[index].is_rest:
                return index
        raise ValueError("program has no mechanical phase")
