"""Core package for collusion-lab."""

from .errors import CollusionLabError, InvalidInstanceError, NoConvergenceError
from .fisher import ZeroGoodPolicy, mnw_allocate, proportional_response_solve, verify_equilibrium
from .mechanisms import couple_ps_with_rr, probabilistic_serial, ps_via_rr, round_robin
from .models import Coalition, FractionalAllocation, Instance, IntegralAllocation, OrdinalProfile

__all__ = [
    "CollusionLabError",
    "InvalidInstanceError",
    "NoConvergenceError",
    "ZeroGoodPolicy",
    "mnw_allocate",
    "proportional_response_solve",
    "verify_equilibrium",
    "couple_ps_with_rr",
    "probabilistic_serial",
    "ps_via_rr",
    "round_robin",
    "Coalition",
    "FractionalAllocation",
    "Instance",
    "IntegralAllocation",
    "OrdinalProfile",
]
