"""Macro-action policies: constrained flight, unconstrained flight and ride."""

from .constrained_flight import (
    ABORT,
    AbortParams,
    CFPolicy,
    CFState,
    SuccessSet,
    cf_action,
    evaluate_cf,
    solve_cf,
    terminal_penalty,
)
from .ride import ride_action
from .unconstrained_flight import UFPolicy, solve_uf, uf_action, uf_state, uf_value

__all__ = [
    "ABORT",
    "AbortParams",
    "CFPolicy",
    "CFState",
    "SuccessSet",
    "UFPolicy",
    "cf_action",
    "evaluate_cf",
    "ride_action",
    "solve_cf",
    "solve_uf",
    "terminal_penalty",
    "uf_action",
    "uf_state",
    "uf_value",
]
