"""Validation, utilities and fairness predicates over instances and allocations."""

import logging
from collections.abc import Sequence, Set
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .errors import EmptyInstanceError, NegativeValueError, ZeroRowError
from .models import FractionalAllocation, FrozenModel, Instance, IntegralAllocation, OrdinalProfile

logger = logging.getLogger(__name__)

Allocation = Union[FractionalAllocation, IntegralAllocation]


class FairnessVerdict(FrozenModel):
    """Outcome of a fairness predicate; witness is (envier, envied), 0-based."""

    holds: bool
    witness: Optional[tuple[int, int]] = None

    def __bool__(self) -> bool:
        return self.holds


def validate_instance(inst: Instance, for_fisher: bool = False) -> None:
    """
    Check the domain invariants of an instance.

    Raises EmptyInstanceError, NegativeValueError, or (only when the instance
    is meant for the market solver) ZeroRowError for an agent who values
    nothing.
    """
    if inst.n < 1 or inst.m < 1:
        raise EmptyInstanceError(inst.n, inst.m)
    for a, row in enumerate(inst.valuations):
        for g, v in enumerate(row):
            if v < 0:
                raise NegativeValueError(a, g, v)
    if for_fisher:
        for a, row in enumerate(inst.valuations):
            if not any(v > 0 for v in row):
                raise ZeroRowError(a)


def ordinal_from_cardinal(inst: Instance) -> OrdinalProfile:
    """Strict orderings consistent with the values; ties go to the lower good index."""
    orderings = []
    for row in inst.valuations:
        orderings.append(tuple(sorted(range(inst.m), key=lambda g: (-row[g], g))))
    return OrdinalProfile(orderings=orderings)


def utility(inst: Instance, agent: int, bundle: Union[Sequence[Fraction], Set[int]]) -> Fraction:
    """
    Additive value of a bundle for an agent.

    A set of good indices is read as an integral bundle; any other sequence
    is read as the agent's row of fractional shares.
    """
    row = inst.valuations[agent]
    if isinstance(bundle, Set):
        return sum((row[g] for g in bundle), Fraction(0))
    if len(bundle) != inst.m:
        raise ValueError(f"Share row has length {len(bundle)}, expected {inst.m}")
    return sum((v * x for v, x in zip(row, bundle)), Fraction(0))


def allocation_utilities(inst: Instance, alloc: Allocation) -> tuple[Fraction, ...]:
    if isinstance(alloc, IntegralAllocation):
        return tuple(utility(inst, a, alloc.bundle(a)) for a in range(alloc.n))
    return tuple(utility(inst, a, alloc.row(a)) for a in range(alloc.n))


def is_envy_free(inst: Instance, alloc: Allocation, tol: Union[Fraction, float] = 0) -> FairnessVerdict:
    """True iff no agent values another bundle above its own by more than tol."""
    x = alloc.matrix()
    for a in range(inst.n):
        own = utility(inst, a, x[a])
        for b in range(inst.n):
            if a != b and utility(inst, a, x[b]) > own + tol:
                return FairnessVerdict(holds=False, witness=(a, b))
    return FairnessVerdict(holds=True)


def is_ef1(inst: Instance, alloc: IntegralAllocation) -> FairnessVerdict:
    """Envy-freeness up to one good: dropping the best good from any envied bundle removes envy."""
    for a in range(inst.n):
        own = utility(inst, a, alloc.bundle(a))
        for b in range(inst.n):
            other = alloc.bundle(b)
            if a == b or not other:
                continue
            best = max(inst.valuations[a][g] for g in other)
            if own < utility(inst, a, other) - best:
                return FairnessVerdict(holds=False, witness=(a, b))
    return FairnessVerdict(holds=True)


def nash_welfare_of_utilities(utilities: Sequence) -> float:
    """Geometric mean of utilities, evaluated in log space; 0 if any utility is not positive."""
    u = np.asarray([float(v) for v in utilities], dtype=float)
    if u.size == 0 or np.any(u <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(u))))


def nash_welfare(inst: Instance, alloc: Union[Allocation, np.ndarray]) -> float:
    """
    Nash welfare (geometric mean of utilities) of an allocation.

    Accepts exact allocations or a real-valued n x m share matrix, so that
    solver output and sampled allocations can be compared directly.
    """
    if isinstance(alloc, np.ndarray):
        values = np.array([[float(v) for v in row] for row in inst.valuations])
        return nash_welfare_of_utilities((values * alloc).sum(axis=1))
    return nash_welfare_of_utilities(allocation_utilities(inst, alloc))
