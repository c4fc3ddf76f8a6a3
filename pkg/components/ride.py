"""Ride macro-action: stay aboard until the vehicle reaches the alight waypoint."""

import logging

from config import EPS_CF
from transit import DreamrState, Interaction

logger = logging.getLogger(__name__)


def ride_action(
    state: DreamrState, vehicle_id: int, alight_index: int, eps_cf: float = EPS_CF
) -> Interaction:
    """ALIGHT once the alight waypoint's ETA is within eps_cf (or it has passed)."""
    if state.riding_on != vehicle_id:
        logger.warning(
            "Ride plan for vehicle %s while aboard %s; alighting", vehicle_id, state.riding_on
        )
        return Interaction.ALIGHT
    waypoint = state.routes[vehicle_id].waypoint(alight_index)
    # ETAs along a route are strictly increasing, so an alight ETA within eps_cf means
    # every earlier waypoint has been reached and this one is next.
    if waypoint is None or waypoint.eta - state.now < eps_cf:
        return Interaction.ALIGHT
    return Interaction.NOOP
