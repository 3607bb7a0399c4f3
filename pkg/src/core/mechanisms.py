"""
Allocation mechanisms: Round-Robin, Probabilistic Serial (eating), and
Probabilistic Serial simulated by Round-Robin over copies of each good.

All arithmetic is exact. Every mechanism returns its execution trace next to
the allocation; the checkers at the bottom of this module assert the
structural properties of those traces.
"""

import logging
import math
from collections import Counter
from fractions import Fraction
from typing import Optional

from pydantic import Field, model_validator

from .errors import InvalidTError
from .models import FractionalAllocation, FrozenModel, Instance, IntegralAllocation, OrdinalProfile
from .rational import Rational

logger = logging.getLogger(__name__)

PAPER_T_LIMIT = 10**6


# --- Round-Robin ---

class RrStage(FrozenModel):
    agent: int
    good: int


class RrTrace(FrozenModel):
    """Picks in stage order; stage i is served by agent i mod n."""

    n: int
    stages: tuple[RrStage, ...]


def round_robin(profile: OrdinalProfile) -> tuple[IntegralAllocation, RrTrace]:
    """
    Agents 0, 1, ..., n-1, 0, 1, ... each take their favourite remaining good.

    m need not be a multiple of n; the last round is then partial.
    """
    n, m = profile.n, profile.m
    taken = [False] * m
    cursor = [0] * n
    bundles: list[list[int]] = [[] for _ in range(n)]
    stages = []
    for stage in range(m):
        agent = stage % n
        ordering = profile.orderings[agent]
        # cursors only move forward, a taken good never comes back
        while taken[ordering[cursor[agent]]]:
            cursor[agent] += 1
        good = ordering[cursor[agent]]
        taken[good] = True
        bundles[agent].append(good)
        stages.append(RrStage(agent=agent, good=good))
    logger.debug("Round-robin over %d goods for %d agents done", m, n)
    return IntegralAllocation(m=m, bundles=bundles), RrTrace(n=n, stages=tuple(stages))


# --- Probabilistic Serial ---

class PsStep(FrozenModel):
    """One step of the eating process."""

    t: Rational = Field(description="Duration of the step")
    candidates: dict[int, Rational] = Field(
        description="Time each eaten good would need to finish at the current eating rate"
    )
    eaters: dict[int, tuple[int, ...]] = Field(description="Good -> agents eating it during the step")
    finished: tuple[int, ...] = Field(description="Goods consumed at the end of the step")
    available: tuple[int, ...] = Field(description="Goods still available after the step")


class PsTrace(FrozenModel):
    n: int
    m: int
    steps: tuple[PsStep, ...]

    @property
    def K(self) -> int:
        return len(self.steps)

    @property
    def total_time(self) -> Fraction:
        return sum((s.t for s in self.steps), Fraction(0))

    def eaten_by(self, step: int) -> dict[int, int]:
        """Agent -> good eaten during the given step (0-based step index)."""
        return {a: g for g, agents in self.steps[step].eaters.items() for a in agents}

    def snapshot(self, h: int) -> tuple[tuple[Fraction, ...], ...]:
        """Partial allocation after the first h steps (h = 0 is the empty allocation)."""
        if not 0 <= h <= self.K:
            raise ValueError(f"Step {h} outside 0..{self.K}")
        x = [[Fraction(0)] * self.m for _ in range(self.n)]
        for step in self.steps[:h]:
            for g, agents in step.eaters.items():
                for a in agents:
                    x[a][g] += step.t
        return tuple(tuple(row) for row in x)


def probabilistic_serial(profile: OrdinalProfile) -> tuple[FractionalAllocation, PsTrace]:
    """
    Eating algorithm with unit speeds.

    Each step every agent eats its favourite available good; the step lasts
    until the first good runs out. All goods running out at that moment are
    removed together.
    """
    n, m = profile.n, profile.m
    remaining = [Fraction(1)] * m
    available = [True] * m
    cursor = [0] * n
    shares = [[Fraction(0)] * m for _ in range(n)]
    steps = []
    left = m
    while left:
        # 1. Everyone points at their favourite good that is still on the table
        eaters: dict[int, list[int]] = {}
        for a in range(n):
            ordering = profile.orderings[a]
            while not available[ordering[cursor[a]]]:
                cursor[a] += 1
            eaters.setdefault(ordering[cursor[a]], []).append(a)
        # 2. The step ends when the first of those goods runs out
        candidates = {g: remaining[g] / len(agents) for g, agents in eaters.items()}
        t = min(candidates.values())
        # 3. Eat for t, exactly (Fractions, no rounding)
        for g, agents in eaters.items():
            for a in agents:
                shares[a][g] += t
            remaining[g] -= t * len(agents)
        # 4. Several goods can run out together, drop them all in this step
        finished = sorted(g for g, tg in candidates.items() if tg == t)
        for g in finished:
            available[g] = False
        left -= len(finished)
        steps.append(PsStep(
            t=t,
            candidates=dict(sorted(candidates.items())),
            eaters={g: tuple(eaters[g]) for g in sorted(eaters)},
            finished=tuple(finished),
            available=tuple(g for g in range(m) if available[g]),
        ))
        logger.debug("PS step %d: t=%s, finished %s", len(steps), t, finished)
    return FractionalAllocation(shares=shares), PsTrace(n=n, m=m, steps=tuple(steps))


def minimal_coupling_T(trace: PsTrace) -> int:
    """Least T with T * t integral for every step duration t."""
    return math.lcm(*(step.t.denominator for step in trace.steps))


def paper_coupling_T(n: int, m: int) -> int:
    """(n!)^m, refused when the copy universe m*T would exceed PAPER_T_LIMIT goods."""
    T = math.factorial(n) ** m
    if m * T > PAPER_T_LIMIT:
        raise InvalidTError(T, f"m*T = {m * T} copies exceeds the limit of {PAPER_T_LIMIT}")
    return T


# --- PS via RR ---

class CopyUniverse(FrozenModel):
    """
    T copies of every good. Copy k of good g has index g*T + k.

    Orderings over copies follow the original order between goods and
    ascending copy index within a good.
    """

    n: int
    m: int
    T: int = Field(ge=1)
    orderings: tuple[tuple[int, ...], ...]

    @model_validator(mode="after")
    def check_universe(self) -> "CopyUniverse":
        if (self.m * self.T) % self.n:
            raise ValueError(f"n={self.n} does not divide m*T={self.m * self.T}")
        for ordering in self.orderings:
            if len(ordering) != self.m * self.T:
                raise ValueError("Every expanded ordering must cover all m*T copies")
        return self

    def original(self, copy: int) -> int:
        return copy // self.T

    def copies_of(self, good: int) -> range:
        return range(good * self.T, (good + 1) * self.T)

    def profile(self) -> OrdinalProfile:
        return OrdinalProfile(orderings=self.orderings)


def expand_profile(profile: OrdinalProfile, T: int) -> CopyUniverse:
    if T < 1:
        raise InvalidTError(T, "T must be a positive integer")
    if (profile.m * T) % profile.n:
        raise InvalidTError(T, f"n={profile.n} does not divide m*T={profile.m * T}")
    orderings = [
        tuple(g * T + k for g in ordering for k in range(T))
        for ordering in profile.orderings
    ]
    return CopyUniverse(n=profile.n, m=profile.m, T=T, orderings=orderings)


def lift_valuations(inst: Instance, T: int) -> Instance:
    """Valuations over the copy universe: every copy of g is worth v_a(g) / T."""
    if T < 1:
        raise InvalidTError(T, "T must be a positive integer")
    rows = [[v / T for v in row for _ in range(T)] for row in inst.valuations]
    return Instance(n=inst.n, m=inst.m * T, divisible=False, valuations=rows)


class CouplingResult(FrozenModel):
    allocation: FractionalAllocation
    T: int
    ps_trace: PsTrace
    rr_trace: RrTrace
    universe: CopyUniverse


def _check_T(trace: PsTrace, T: int) -> None:
    if T < 1:
        raise InvalidTError(T, "T must be a positive integer")
    if (trace.m * T) % trace.n:
        raise InvalidTError(T, f"n={trace.n} does not divide m*T={trace.m * T}")
    for k, step in enumerate(trace.steps, start=1):
        if (T * step.t).denominator != 1:
            raise InvalidTError(T, f"T * t^({k}) = {T * step.t} is not an integer")


def couple_ps_with_rr(
    profile: OrdinalProfile,
    T: Optional[int] = None,
    paper_T: bool = False,
) -> CouplingResult:
    """
    Run Round-Robin on T copies of every good and read shares off the copy counts.

    T defaults to the minimal coupling value for this profile; ``paper_T``
    uses (n!)^m instead. Any T is checked against the eating trace first.
    """
    _, ps_trace = probabilistic_serial(profile)
    if T is not None and paper_T:
        raise InvalidTError(T, "give either an explicit T or paper_T, not both")
    if paper_T:
        T = paper_coupling_T(profile.n, profile.m)
    elif T is None:
        T = minimal_coupling_T(ps_trace)
    _check_T(ps_trace, T)

    universe = expand_profile(profile, T)
    rr_alloc, rr_trace = round_robin(universe.profile())
    shares = []
    for a in range(profile.n):
        counts = Counter(universe.original(c) for c in rr_alloc.bundles[a])
        shares.append([Fraction(counts.get(g, 0), T) for g in range(profile.m)])
    logger.debug("Coupled PS with RR over %d copies (T=%d)", profile.m * T, T)
    return CouplingResult(
        allocation=FractionalAllocation(shares=shares),
        T=T,
        ps_trace=ps_trace,
        rr_trace=rr_trace,
        universe=universe,
    )


def ps_via_rr(profile: OrdinalProfile, T: Optional[int] = None, paper_T: bool = False) -> FractionalAllocation:
    return couple_ps_with_rr(profile, T=T, paper_T=paper_T).allocation


# --- trace checkers ---

def trace_violations(trace: PsTrace, allocation: Optional[FractionalAllocation] = None) -> list[str]:
    """
    Structural checks on an eating trace. Returns human-readable violations
    (empty when everything holds).
    """
    n, m = trace.n, trace.m
    problems = []
    if trace.K > m:
        problems.append(f"K={trace.K} exceeds m={m}")
    if not trace.steps or trace.steps[-1].available:
        problems.append("goods remain available after the last step")
    if trace.total_time != Fraction(m, n):
        problems.append(f"total time {trace.total_time} != m/n = {Fraction(m, n)}")

    fact = math.factorial(n)
    consumed = [Fraction(0)] * m
    x = [[Fraction(0)] * m for _ in range(n)]
    done: set[int] = set()
    for k, step in enumerate(trace.steps, start=1):
        if step.t <= 0:
            problems.append(f"step {k}: non-positive duration {step.t}")
        if (step.t * fact**k).denominator != 1:
            problems.append(f"step {k}: t * (n!)^k = {step.t * fact**k} is not an integer")
        for g, agents in step.eaters.items():
            if g in done:
                problems.append(f"step {k}: good {g} eaten after it was finished")
            consumed[g] += step.t * len(agents)
            for a in agents:
                x[a][g] += step.t
        for a in range(n):
            for g in range(m):
                if (x[a][g] * fact**k).denominator != 1:
                    problems.append(f"step {k}: x[{a}][{g}] * (n!)^k is not an integer")
        snap = trace.snapshot(k)
        for g in range(m):
            mass = sum((snap[a][g] for a in range(n)), Fraction(0))
            if mass != consumed[g]:
                problems.append(f"step {k}: good {g} holds {mass}, eaten amount is {consumed[g]}")
            if g in step.finished and consumed[g] != 1:
                problems.append(f"step {k}: finished good {g} is only {consumed[g]} consumed")
            if g not in step.finished and g not in done and consumed[g] >= 1:
                problems.append(f"step {k}: good {g} consumed but not reported finished")
        done.update(step.finished)

    if allocation is not None and trace.snapshot(trace.K) != allocation.shares:
        problems.append("final snapshot differs from the returned allocation")
    return problems


def coupling_violations(result: CouplingResult) -> list[str]:
    """
    During coupled step k, every agent must pick exactly T * t^(k) copies,
    all of the good it eats in step k of the eating process.
    """
    trace, universe, T = result.ps_trace, result.universe, result.T
    n = trace.n
    problems = []
    position = 0
    stages = result.rr_trace.stages
    for k, step in enumerate(trace.steps, start=1):
        rounds = T * step.t
        if rounds.denominator != 1:
            problems.append(f"step {k}: T * t = {rounds} is not an integer")
            continue
        block = stages[position:position + n * int(rounds)]
        position += n * int(rounds)
        eaten = trace.eaten_by(k - 1)
        picked = Counter()
        for stage in block:
            good = universe.original(stage.good)
            if good != eaten[stage.agent]:
                problems.append(
                    f"step {k}: agent {stage.agent} picked a copy of good {good}, eats good {eaten[stage.agent]}"
                )
            picked[stage.agent] += 1
        for a in range(n):
            if picked[a] != rounds:
                problems.append(f"step {k}: agent {a} picked {picked[a]} copies, expected {rounds}")
    if position != len(stages):
        problems.append(f"coupled steps cover {position} stages, RR ran {len(stages)}")
    return problems
