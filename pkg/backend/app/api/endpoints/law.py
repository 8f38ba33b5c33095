"""
Traction-law endpoints: curve sampling, healing degree and contact factor.
"""
import numpy as np
from fastapi import APIRouter, HTTPException, Query

from app.core.errors import MaterialDomainError
from app.models import CohesiveState
from app.schemas.law import LawCurve, LawCurveRequest
from app.schemas.material import BulkMaterial, HealingAgent
from app.services import material_law

router = APIRouter()


def _history(request: LawCurveRequest) -> CohesiveState:
    material, agent = request.material, request.agent
    t_mx = material_law.softening_traction(request.zeta_mx, material)
    state = CohesiveState(zeta_mx=request.zeta_mx, T_mx=t_mx, time=request.rest_time_h)
    if agent is None:
        return state
    t_mx_r = request.traction_at_release if request.traction_at_release is not None else t_mx
    if t_mx_r > agent.release_threshold:
        return state
    return state.evolve(
        released=True,
        t_r=0.0,
        T_mx_r=t_mx_r,
        alpha=material_law.contact_factor(t_mx_r, material, agent),
        zeta_hx=request.zeta_hx,
    )


@router.post("/curve", response_model=LawCurve)
def law_curve(request: LawCurveRequest):
    """
    Sample T, alpha H and T_eq over [0, max_opening] for a committed history.
    """
    material, agent = request.material, request.agent
    state = _history(request)
    upper = request.max_opening or 5.0 * material.fracture_energy / material.tensile_strength
    zetas = np.linspace(0.0, upper, request.points)
    original, healed = [], []
    try:
        for zeta in zetas:
            original.append(material_law.original_traction(zeta, state, material))
            healed.append(state.alpha * material_law.healed_traction(zeta, request.rest_time_h, state, agent))
    except MaterialDomainError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    degree = material_law.healing_degree(request.rest_time_h, agent) if agent is not None else 0.0
    return LawCurve(
        zeta=zetas.tolist(),
        original=original,
        healed=healed,
        equivalent=(np.array(original) + np.array(healed)).tolist(),
        released=state.released,
        contact_factor=state.alpha,
        healing_degree=degree,
    )


@router.get("/healing-degree")
def healing_degree(
    rate: float = Query(..., gt=0, description="A_h, 1/h"),
    rest_time: float = Query(..., ge=0, description="h"),
):
    """Maturity R = 1 - exp(-A_h dt)."""
    agent = HealingAgent(ultimate_strength=1.0, ultimate_fracture_energy=1.0, healing_rate=rate,
                         release_threshold=1.0, contact_exponent=1.0)
    return {"rate": rate, "rest_time_h": rest_time, "degree": material_law.healing_degree(rest_time, agent)}


@router.get("/contact-factor")
def contact_factor(
    traction_at_release: float = Query(..., ge=0, description="T_mx,r in MPa"),
    tensile_strength: float = Query(..., gt=0, description="f_t in MPa"),
    release_threshold: float = Query(..., gt=0, description="T_0 in MPa"),
    exponent: float = Query(2.0, gt=0, description="b"),
):
    if release_threshold > tensile_strength:
        raise HTTPException(status_code=422, detail="release threshold exceeds the tensile strength")
    material = BulkMaterial(young_modulus=1.0, poisson_ratio=0.0, tensile_strength=tensile_strength,
                            fracture_energy=1.0)
    agent = HealingAgent(ultimate_strength=1.0, ultimate_fracture_energy=1.0, healing_rate=1.0,
                         release_threshold=release_threshold, contact_exponent=exponent)
    return {"alpha": material_law.contact_factor(traction_at_release, material, agent)}
