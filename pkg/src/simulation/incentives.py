"""
Manipulation gains: ratio semantics, exhaustive coalition search for the
ordinal mechanisms, the binary-valuation reduction, and explicit MNW
manipulations.
"""

import logging
import math
import multiprocessing
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, permutations, product
from typing import Optional, Union

import numpy as np
from pydantic import Field, computed_field, model_validator
from tqdm import tqdm

from ..core.errors import PreconditionViolatedError, SearchTooLargeError
from ..core.fisher import DEFAULT_MAX_ITER, DEFAULT_TOL, ZeroGoodPolicy, mnw_allocate
from ..core.mechanisms import probabilistic_serial, round_robin
from ..core.models import Coalition, FrozenModel, Instance, OrdinalProfile
from ..core.rational import INF, Ratio, Rational, format_ratio, is_infinite
from ..core.valuations import allocation_utilities, ordinal_from_cardinal, utility

logger = logging.getLogger(__name__)

SEARCH_LIMIT = 10**7


class Mechanism(str, Enum):
    RR = "RR"
    PS = "PS"
    MNW = "MNW"


def gain_ratio(u_true: Fraction, u_manip: Fraction) -> Union[Fraction, float]:
    """u_manip / u_true, with 0/0 = 1 and positive/0 = inf."""
    if u_true < 0 or u_manip < 0:
        raise ValueError(f"Utilities must be non-negative, got {u_true}, {u_manip}")
    if u_true == 0:
        return Fraction(1) if u_manip == 0 else INF
    return Fraction(u_manip) / Fraction(u_true)


class RatioReport(FrozenModel):
    """Gains of the corrupted agents under one manipulation, measured with true valuations."""

    coalition: Coalition
    per_agent: dict[int, Ratio]
    truthful_utilities: dict[int, Rational]
    manipulated_utilities: dict[int, Rational]
    all_weakly_better: bool
    min_ratio: Ratio
    max_ratio: Ratio

    @model_validator(mode="after")
    def check_report(self) -> "RatioReport":
        if set(self.per_agent) != set(self.coalition.members):
            raise ValueError("Ratios must be given for exactly the coalition members")
        if self.min_ratio > self.max_ratio:
            raise ValueError(f"min ratio {self.min_ratio} exceeds max ratio {self.max_ratio}")
        if self.all_weakly_better != all(r >= 1 for r in self.per_agent.values()):
            raise ValueError("all_weakly_better disagrees with the per-agent ratios")
        return self

    @classmethod
    def build(cls, coalition: Coalition, truthful: dict[int, Fraction], manipulated: dict[int, Fraction]) -> "RatioReport":
        ratios = {a: gain_ratio(truthful[a], manipulated[a]) for a in coalition.members}
        return cls(
            coalition=coalition,
            per_agent=ratios,
            truthful_utilities=truthful,
            manipulated_utilities=manipulated,
            all_weakly_better=all(r >= 1 for r in ratios.values()),
            min_ratio=min(ratios.values()),
            max_ratio=max(ratios.values()),
        )


class SearchResult(FrozenModel):
    mechanism: Mechanism
    n: int
    m: int
    c: int
    gir_literal: bool = Field(description="GIR ranges over all manipulations (True) or only weakly improving ones")
    empirical_ir: Ratio
    empirical_gir: Ratio
    empirical_sgir: Ratio
    empirical_unconditional_max: Ratio = Field(
        description="Largest corrupted ratio over all manipulations, no weak-improvement filter"
    )
    first_picker_max: Optional[Ratio] = Field(
        default=None, description="Largest ratio of agent 0 over coalitions containing it"
    )
    argmax: dict[str, RatioReport]
    profiles_searched: int
    sgir_feasible_count: int
    infinite_ratio_count: int

    @computed_field
    @property
    def empirical(self) -> dict[str, str]:
        return {
            "ir": format_ratio(self.empirical_ir),
            "gir": format_ratio(self.empirical_gir),
            "sgir": format_ratio(self.empirical_sgir),
        }


class BinaryReduction(FrozenModel):
    prefix: int = Field(ge=0, description="Largest prefix length attaining r_max")
    r_max: Ratio
    prefix_ratios: tuple[Ratio, ...]
    valuation: tuple[int, ...] = Field(description="0/1 valuation indexed by original good")


# --- mechanism dispatch ---

@lru_cache(maxsize=1 << 16)
def _shares(mechanism: Mechanism, orderings: tuple[tuple[int, ...], ...]) -> tuple[tuple[Fraction, ...], ...]:
    profile = OrdinalProfile(orderings=orderings)
    if mechanism == Mechanism.RR:
        return round_robin(profile)[0].matrix()
    if mechanism == Mechanism.PS:
        return probabilistic_serial(profile)[0].shares
    raise PreconditionViolatedError(f"{mechanism.value} is not an ordinal mechanism")


def mechanism_shares(mechanism: Union[Mechanism, str], profile: OrdinalProfile) -> tuple[tuple[Fraction, ...], ...]:
    """Share matrix of RR or PS on an ordinal profile (memoized per profile)."""
    return _shares(Mechanism(mechanism), profile.orderings)


def received_fractions(shares_row, ordering) -> tuple[Fraction, ...]:
    """An agent's shares listed in its own preference order."""
    return tuple(shares_row[g] for g in ordering)


def _ordinal_utilities(inst: Instance, shares, agents) -> dict[int, Fraction]:
    return {a: utility(inst, a, shares[a]) for a in agents}


def evaluate_manipulation(
    mechanism: Union[Mechanism, str],
    inst: Instance,
    coalition: Coalition,
    truthful: Optional[OrdinalProfile] = None,
) -> RatioReport:
    """
    Run an ordinal mechanism on the truthful and on the manipulated profile.

    ``truthful`` overrides the value-sorted profile when the instance needs
    specific tie-breaks.
    """
    mechanism = Mechanism(mechanism)
    if not coalition.is_ordinal:
        raise PreconditionViolatedError("RR and PS need ordinal misreports")
    profile = truthful or ordinal_from_cardinal(inst)
    before = mechanism_shares(mechanism, profile)
    after = mechanism_shares(mechanism, profile.replace(coalition.ordinal))
    return RatioReport.build(
        coalition,
        _ordinal_utilities(inst, before, coalition.members),
        _ordinal_utilities(inst, after, coalition.members),
    )


# --- exhaustive search ---

def search_size(n: int, m: int, c: int) -> int:
    """Number of (coalition, joint misreport) pairs with |C| <= c."""
    per_agent = math.factorial(m)
    return sum(math.comb(n, k) * per_agent**k for k in range(1, min(c, n) + 1))


class _Partial(FrozenModel):
    """Aggregates over the manipulations of one coalition."""

    best: dict[str, Ratio]
    reports: dict[str, RatioReport]
    profiles: int
    feasible: int
    infinite: int


def _consider(best: dict, reports: dict, key: str, value, make_report) -> None:
    if value is None or is_infinite(value):
        return
    if key not in best or value > best[key]:
        best[key] = value
        reports[key] = make_report()


def _search_coalition(task: tuple) -> _Partial:
    mechanism, inst, truthful, members, truthful_utils, gir_literal = task
    perms = list(permutations(range(inst.m)))
    best: dict = {}
    reports: dict = {}
    profiles = feasible = infinite = 0
    for misreport in product(perms, repeat=len(members)):
        replacements = dict(zip(members, misreport))
        shares = _shares(mechanism, truthful.replace(replacements).orderings)
        manip_utils = _ordinal_utilities(inst, shares, members)
        ratios = {a: gain_ratio(truthful_utils[a], manip_utils[a]) for a in members}
        finite = [r for r in ratios.values() if not is_infinite(r)]
        profiles += 1
        if len(finite) < len(ratios):
            infinite += 1
        weakly = all(r >= 1 for r in ratios.values())
        feasible += weakly

        def make_report(replacements=replacements, manip_utils=manip_utils):
            coalition = Coalition.from_orderings(replacements)
            return RatioReport.build(coalition, {a: truthful_utils[a] for a in members}, manip_utils)

        if not finite:
            continue
        lo, hi = min(finite), max(finite)
        if len(members) == 1:
            _consider(best, reports, "ir", lo, make_report)
        if gir_literal or weakly:
            _consider(best, reports, "gir", lo, make_report)
        if weakly:
            _consider(best, reports, "sgir", hi, make_report)
        _consider(best, reports, "unconditional", hi, make_report)
        if 0 in ratios:
            _consider(best, reports, "first_picker", ratios[0], make_report)
    return _Partial(best=best, reports=reports, profiles=profiles, feasible=feasible, infinite=infinite)


def exhaustive_search(
    mechanism: Union[Mechanism, str],
    inst: Instance,
    c: int,
    truthful: Optional[OrdinalProfile] = None,
    gir_literal: bool = True,
    processes: int = 1,
    limit: int = SEARCH_LIMIT,
    progress: bool = False,
) -> SearchResult:
    """
    Try every coalition of size at most c with every joint misreport of strict orderings.

    Infinite ratios (truthful utility 0, manipulated utility positive) do not
    enter the aggregates; manipulations producing one are counted in
    ``infinite_ratio_count``. Ties keep the first manipulation in enumeration
    order (coalitions by size then lexicographically, misreports in
    permutation-product order).
    """
    mechanism = Mechanism(mechanism)
    if mechanism == Mechanism.MNW:
        raise PreconditionViolatedError("MNW has a continuous misreport space; use explicit or probe manipulations")
    if c < 1:
        raise ValueError(f"Coalition bound must be at least 1, got {c}")
    count = search_size(inst.n, inst.m, c)
    if count > limit:
        raise SearchTooLargeError(count, limit)

    truthful = truthful or ordinal_from_cardinal(inst)
    truth = mechanism_shares(mechanism, truthful)
    truthful_utils = _ordinal_utilities(inst, truth, range(inst.n))
    coalitions = [
        members
        for k in range(1, min(c, inst.n) + 1)
        for members in combinations(range(inst.n), k)
    ]
    tasks = [(mechanism, inst, truthful, members, truthful_utils, gir_literal) for members in coalitions]
    logger.info("Searching %d manipulations of %s over %d coalitions", count, mechanism.value, len(coalitions))

    if processes > 1:
        with multiprocessing.Pool(processes=processes) as pool:
            partials = list(tqdm(pool.imap(_search_coalition, tasks), total=len(tasks), disable=not progress, desc="coalitions"))
    else:
        partials = [_search_coalition(t) for t in tqdm(tasks, disable=not progress, desc="coalitions")]

    best: dict = {}
    reports: dict = {}
    for partial in partials:
        for key, value in partial.best.items():
            _consider(best, reports, key, value, lambda key=key, partial=partial: partial.reports[key])

    return SearchResult(
        mechanism=mechanism,
        n=inst.n,
        m=inst.m,
        c=c,
        gir_literal=gir_literal,
        empirical_ir=best.get("ir", Fraction(1)),
        empirical_gir=best.get("gir", Fraction(1)),
        empirical_sgir=best.get("sgir", Fraction(1)),
        empirical_unconditional_max=best.get("unconditional", Fraction(1)),
        first_picker_max=best.get("first_picker"),
        argmax={key: reports[key] for key in ("ir", "gir", "sgir") if key in reports},
        profiles_searched=sum(p.profiles for p in partials),
        sgir_feasible_count=sum(p.feasible for p in partials),
        infinite_ratio_count=sum(p.infinite for p in partials),
    )


# --- binary reduction ---

def binary_reduction(ordering, l_true, l_manip) -> BinaryReduction:
    """
    Replace an agent's valuation by the 0/1 valuation that maximizes its gain.

    ``l_true`` and ``l_manip`` are the received fractions in preference
    order. Prefix sums are compared for every prefix length (0/0 = 1); the
    largest maximizing prefix defines the returned valuation.
    """
    m = len(ordering)
    if len(l_true) != m or len(l_manip) != m:
        raise ValueError("Fraction vectors must have one entry per good")
    ratios = [Fraction(1)]
    sum_true = sum_manip = Fraction(0)
    for lt, lm in zip(l_true, l_manip):
        sum_true += lt
        sum_manip += lm
        ratios.append(gain_ratio(sum_true, sum_manip))
    r_max = max(ratios)
    prefix = max(i for i, r in enumerate(ratios) if r == r_max)
    valuation = [0] * m
    for g in ordering[:prefix]:
        valuation[g] = 1
    return BinaryReduction(prefix=prefix, r_max=r_max, prefix_ratios=tuple(ratios), valuation=tuple(valuation))


def reduction_dominance(
    mechanism: Union[Mechanism, str],
    inst: Instance,
    coalition: Coalition,
    truthful: Optional[OrdinalProfile] = None,
) -> dict[int, tuple[Union[Fraction, float], Union[Fraction, float]]]:
    """Per corrupted agent: (ratio under its cardinal valuation, ratio under its reduced 0/1 valuation)."""
    mechanism = Mechanism(mechanism)
    profile = truthful or ordinal_from_cardinal(inst)
    before = mechanism_shares(mechanism, profile)
    after = mechanism_shares(mechanism, profile.replace(coalition.ordinal))
    result = {}
    for a in coalition.members:
        ordering = profile.orderings[a]
        reduced = binary_reduction(
            ordering,
            received_fractions(before[a], ordering),
            received_fractions(after[a], ordering),
        )
        binary_inst = inst.with_rows({a: reduced.valuation})
        cardinal = gain_ratio(utility(inst, a, before[a]), utility(inst, a, after[a]))
        binary = gain_ratio(utility(binary_inst, a, before[a]), utility(binary_inst, a, after[a]))
        result[a] = (cardinal, binary)
    return result


# --- MNW ---

def mnw_manipulation_ratio(
    inst: Instance,
    coalition: Coalition,
    zero_good_policy_true: Optional[ZeroGoodPolicy] = None,
    zero_good_policy_manip: Optional[ZeroGoodPolicy] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RatioReport:
    """Gains from one explicit cardinal misreport under maximum Nash welfare."""
    if coalition.cardinal is None:
        raise PreconditionViolatedError("MNW needs cardinal misreports")
    reported = inst.with_rows(coalition.cardinal)
    before = mnw_allocate(inst, zero_good_policy_true, tol=tol, max_iter=max_iter)
    after = mnw_allocate(reported, zero_good_policy_manip, tol=tol, max_iter=max_iter)
    u_before = allocation_utilities(inst, before)
    u_after = allocation_utilities(inst, after)
    return RatioReport.build(
        coalition,
        {a: u_before[a] for a in coalition.members},
        {a: u_after[a] for a in coalition.members},
    )


def mnw_random_probes(
    inst: Instance,
    members,
    probes: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list[RatioReport]:
    """Random 0/1 misreports for the given members; each reported row values some good."""
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(probes):
        rows = {}
        for a in members:
            row = rng.integers(0, 2, size=inst.m)
            if not row.any():
                row[rng.integers(inst.m)] = 1
            rows[a] = tuple(int(v) for v in row)
        reports.append(mnw_manipulation_ratio(inst, Coalition.from_rows(rows), tol=tol, max_iter=max_iter))
    return reports
