"""
Softening-healing traction-separation law.

Pure functions over an explicit CohesiveState. The original material softens
exponentially from f_t and unloads along a secant to the origin; once the
carrier breaks (T_mx <= T_0) a healing agent adds a parallel traction
alpha * R(t - t_r) * H_inf(zeta) with the same envelope/secant structure.
Stresses in Pa, openings in m, times in h.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np

from app.core.errors import MaterialDomainError
from app.models import BranchFlags, CohesiveState, CrackOpening
from app.schemas.material import BulkMaterial, HealingAgent

logger = logging.getLogger(__name__)

DEFAULT_PENALTY_DIVISOR = 50.0

# Relative slack on the inclusive release test T_mx <= T_0.
RELEASE_ROUNDOFF = 1e-12


def effective_opening(zeta_n: float, zeta_t: float, beta: float) -> float:
    """Effective opening sqrt(zeta_n^2 + beta^2 zeta_t^2)."""
    return math.hypot(zeta_n, beta * zeta_t)


def make_opening(zeta_n: float, zeta_t: float, material: BulkMaterial) -> CrackOpening:
    return CrackOpening(zeta_n, zeta_t, effective_opening(zeta_n, zeta_t, material.mode_mix_beta))


def softening_traction(zeta: float, material: BulkMaterial) -> float:
    """Loading envelope TL(zeta) = f_t exp(-(f_t / G_f) zeta)."""
    if zeta < 0:
        raise MaterialDomainError(f"opening must be non-negative, got {zeta}")
    return material.tensile_strength * math.exp(-material.softening_slope * zeta)


def original_traction(
    zeta: float,
    state: CohesiveState,
    material: BulkMaterial,
    loading: Optional[bool] = None,
) -> float:
    """
    Traction of the original material.

    Args:
        zeta: Effective opening
        state: Committed history (zeta_mx, T_mx)
        material: Bulk material
        loading: Force the envelope (True) or the secant (False); detected when None

    Returns:
        TL(zeta) on the loading branch, (T_mx / zeta_mx) zeta on the secant
    """
    if zeta < 0:
        raise MaterialDomainError(f"opening must be non-negative, got {zeta}")
    if loading is None:
        loading = zeta >= state.zeta_mx
    if loading or state.zeta_mx == 0.0:
        return softening_traction(zeta, material)
    return state.T_mx / state.zeta_mx * zeta


def healing_degree(rest_time: float, agent: HealingAgent) -> float:
    """Maturity R(dt) = 1 - exp(-A_h dt), dt in hours."""
    if rest_time < 0:
        raise MaterialDomainError(f"rest time must be non-negative, got {rest_time}")
    return -math.expm1(-agent.healing_rate * rest_time)


def healed_strength(rest_time: float, agent: HealingAgent) -> float:
    """f_h(dt) = R(dt) f_h,inf."""
    return healing_degree(rest_time, agent) * agent.ultimate_strength


def healed_fracture_energy(rest_time: float, agent: HealingAgent) -> float:
    """G_h(dt) = R(dt) G_h,inf."""
    return healing_degree(rest_time, agent) * agent.ultimate_fracture_energy


def healed_envelope(zeta: float, agent: HealingAgent) -> float:
    """HL_inf(zeta) = f_h,inf exp(-(f_h,inf / G_h,inf) zeta)."""
    return agent.ultimate_strength * math.exp(-agent.softening_slope * zeta)


def rest_time_of(state: CohesiveState) -> float:
    return max(state.time - state.t_r, 0.0) if state.released else 0.0


def healed_traction(
    zeta: float,
    rest_time: float,
    state: CohesiveState,
    agent: Optional[HealingAgent],
    loading: Optional[bool] = None,
) -> float:
    """
    Traction carried by the healing agent, H = R(dt) H_inf(zeta).

    Zero while the agent has not been released (or when there is no agent).
    """
    if not state.released or agent is None:
        return 0.0
    if zeta < 0:
        raise MaterialDomainError(f"opening must be non-negative, got {zeta}")
    degree = healing_degree(rest_time, agent)
    if loading is None:
        loading = zeta >= state.zeta_hx
    if loading or state.zeta_hx == 0.0:
        return degree * healed_envelope(zeta, agent)
    return degree * healed_envelope(state.zeta_hx, agent) / state.zeta_hx * zeta


def contact_factor(traction_at_release: float, material: BulkMaterial, agent: HealingAgent) -> float:
    """alpha = 0 above the release threshold, else 1 - (T_mx,r / f_t)^b."""
    if traction_at_release > agent.release_threshold * (1.0 + RELEASE_ROUNDOFF):
        return 0.0
    ratio = min(max(traction_at_release / material.tensile_strength, 0.0), 1.0)
    return 1.0 - ratio ** agent.contact_exponent


def detect_branches(zeta: float, state: CohesiveState) -> BranchFlags:
    return BranchFlags(original_loading=zeta >= state.zeta_mx, agent_loading=zeta >= state.zeta_hx)


def penalty_stiffness(material: BulkMaterial, divisor: float = DEFAULT_PENALTY_DIVISOR) -> float:
    """k_0 = f_t / zeta_0 with zeta_0 = G_f / (divisor f_t)."""
    zeta_0 = material.fracture_energy / (divisor * material.tensile_strength)
    return material.tensile_strength / zeta_0


def agent_penalty_stiffness(agent: HealingAgent, divisor: float = DEFAULT_PENALTY_DIVISOR) -> float:
    zeta_0 = agent.ultimate_fracture_energy / (divisor * agent.ultimate_strength)
    return agent.ultimate_strength / zeta_0


def _scalar_law(
    zeta: float,
    state: CohesiveState,
    material: BulkMaterial,
    agent: Optional[HealingAgent],
    branches: BranchFlags,
) -> Tuple[float, float]:
    """Equivalent traction T_eq(zeta) and its derivative d T_eq / d zeta."""
    if branches.original_loading or state.zeta_mx == 0.0:
        traction = softening_traction(zeta, material)
        slope = -material.softening_slope * traction
    else:
        secant = state.T_mx / state.zeta_mx
        traction = secant * zeta
        slope = secant

    if agent is not None and state.released and state.alpha > 0.0:
        scale = state.alpha * healing_degree(rest_time_of(state), agent)
        if branches.agent_loading or state.zeta_hx == 0.0:
            healed = healed_envelope(zeta, agent)
            healed_slope = -agent.softening_slope * healed
        else:
            secant = healed_envelope(state.zeta_hx, agent) / state.zeta_hx
            healed = secant * zeta
            healed_slope = secant
        traction += scale * healed
        slope += scale * healed_slope
    return traction, slope


def _split_contact(opening: CrackOpening, material: BulkMaterial) -> Tuple[float, float, float]:
    """Positive normal part, tangential part and the effective opening the law sees."""
    zeta_n = max(opening.zeta_n, 0.0)
    return zeta_n, opening.zeta_t, effective_opening(zeta_n, opening.zeta_t, material.mode_mix_beta)


def equivalent_traction(
    opening: CrackOpening,
    state: CohesiveState,
    material: BulkMaterial,
    agent: Optional[HealingAgent] = None,
    branches: Optional[BranchFlags] = None,
    penalty_divisor: float = DEFAULT_PENALTY_DIVISOR,
) -> Tuple[float, float, float]:
    """
    Parallel-spring traction T_eq = T + alpha H and its components.

    Args:
        opening: Current opening (components may be negative)
        state: History, with `time` set to the evaluation instant
        material: Bulk material
        agent: Healing agent, None for a non-healing material
        branches: Frozen branch flags; detected from the opening when None
        penalty_divisor: Divisor defining the contact penalty stiffness

    Returns:
        (T_n, T_t, T_eq)
    """
    zeta_n, zeta_t, zeta = _split_contact(opening, material)
    if branches is None:
        branches = detect_branches(zeta, state)
    t_eq, _ = _scalar_law(zeta, state, material, agent, branches)
    if zeta == 0.0:
        t_n, t_t = 0.0, 0.0
    else:
        t_n = t_eq * zeta_n / zeta
        t_t = t_eq * zeta_t / zeta
    if opening.zeta_n < 0.0:
        t_n += penalty_stiffness(material, penalty_divisor) * opening.zeta_n
    return t_n, t_t, t_eq


def opening_strength(state: CohesiveState, material: BulkMaterial, agent: Optional[HealingAgent] = None) -> float:
    """T_eq at zeta -> 0+; non-zero only where the law is rigid at the origin."""
    strength = material.tensile_strength if state.zeta_mx == 0.0 else 0.0
    if agent is not None and state.released and state.alpha > 0.0 and state.zeta_hx == 0.0:
        strength += state.alpha * healing_degree(rest_time_of(state), agent) * agent.ultimate_strength
    return strength


def traction_tangent(
    opening: CrackOpening,
    state: CohesiveState,
    material: BulkMaterial,
    agent: Optional[HealingAgent] = None,
    branches: Optional[BranchFlags] = None,
    penalty_divisor: float = DEFAULT_PENALTY_DIVISOR,
) -> np.ndarray:
    """
    Tangent block D = d(T_n, T_t) / d(zeta_n, zeta_t) = D_o + alpha D_h.

    At zeta = 0 the secant stiffnesses are used (penalty k_0 at a virgin point).
    """
    zeta_n, zeta_t, zeta = _split_contact(opening, material)
    beta = material.mode_mix_beta
    k_0 = penalty_stiffness(material, penalty_divisor)

    if zeta == 0.0:
        stiffness = state.T_mx / state.zeta_mx if state.zeta_mx > 0.0 else k_0
        if agent is not None and state.released and state.alpha > 0.0:
            if state.zeta_hx > 0.0:
                agent_secant = healed_envelope(state.zeta_hx, agent) / state.zeta_hx
            else:
                agent_secant = agent_penalty_stiffness(agent, penalty_divisor)
            stiffness += state.alpha * healing_degree(rest_time_of(state), agent) * agent_secant
        tangent = np.diag([stiffness, stiffness])
    else:
        if branches is None:
            branches = detect_branches(zeta, state)
        t_eq, slope = _scalar_law(zeta, state, material, agent, branches)
        ratio = t_eq / zeta
        ratio_slope = (slope * zeta - t_eq) / (zeta * zeta)
        d_zeta = np.array([zeta_n / zeta, beta * beta * zeta_t / zeta])
        components = np.array([zeta_n, zeta_t])
        tangent = ratio * np.eye(2) + ratio_slope * np.outer(components, d_zeta)

    if opening.zeta_n < 0.0:
        tangent[0, :] = 0.0
        tangent[:, 0] = 0.0
        tangent[0, 0] = k_0
    return tangent


def commit_state(
    opening: CrackOpening,
    state: CohesiveState,
    time: float,
    material: BulkMaterial,
    agent: Optional[HealingAgent] = None,
) -> CohesiveState:
    """
    History update after a converged global step.

    Args:
        opening: Converged opening
        state: Previously committed state
        time: Time of the converged step (h)
        material: Bulk material
        agent: Healing agent, None for a non-healing material

    Returns:
        New committed state
    """
    _, _, zeta = _split_contact(opening, material)
    zeta_mx = max(state.zeta_mx, zeta)
    changes = dict(
        zeta_n=opening.zeta_n,
        zeta_t=opening.zeta_t,
        zeta_mx=zeta_mx,
        T_mx=softening_traction(zeta_mx, material),
        time=time,
    )
    if not state.released:
        threshold = agent.release_threshold * (1.0 + RELEASE_ROUNDOFF) if agent is not None else None
        if threshold is not None and changes["T_mx"] <= threshold:
            changes.update(
                released=True,
                t_r=time,
                T_mx_r=changes["T_mx"],
                alpha=contact_factor(changes["T_mx"], material, agent),
                zeta_hx=0.0,
            )
            logger.debug(f"Agent released at t={time:.4g} h, T_mx={changes['T_mx']:.4g} Pa, "
                         f"alpha={changes['alpha']:.4f}")
    else:
        changes["zeta_hx"] = max(state.zeta_hx, zeta)
    return state.evolve(**changes)


def reassign_release(
    state: CohesiveState,
    time: float,
    material: BulkMaterial,
    agent: HealingAgent,
) -> CohesiveState:
    """Move the release instant of a released point to `time` (explicit release assignment)."""
    if not state.released:
        return state
    return state.evolve(
        t_r=time,
        T_mx_r=state.T_mx,
        alpha=contact_factor(state.T_mx, material, agent),
        zeta_hx=0.0,
        time=max(state.time, time),
    )


def fracture_energy_dissipated(zeta_mx: float, material: BulkMaterial) -> float:
    """Energy per unit crack area dissipated along the envelope up to zeta_mx (N/m)."""
    return material.fracture_energy * -math.expm1(-material.softening_slope * zeta_mx)
