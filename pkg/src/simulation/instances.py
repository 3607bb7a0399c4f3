"""
Instance generators: the lower-bound constructions with their misreports and
closed-form ratios, plus random and exhaustive instance families for sweeps.
"""

import itertools
import logging
from collections.abc import Iterator
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np
from pydantic import Field, model_validator

from ..core.errors import InvalidParamsError
from ..core.fisher import ZeroGoodKind, ZeroGoodPolicy
from ..core.models import Coalition, FrozenModel, Instance, OrdinalProfile
from ..core.rational import INF, Ratio, Rational, is_infinite
from ..core.valuations import ordinal_from_cardinal
from .incentives import Mechanism

logger = logging.getLogger(__name__)

GENERATOR_GOOD_LIMIT = 10**4


class ValuationFamily(str, Enum):
    BINARY = "binary"
    UNIFORM_RATIONAL = "uniform-rational"


class PaperInstance(FrozenModel):
    """A lower-bound construction bundled with its manipulation and expected gains."""

    name: str
    mechanism: Mechanism
    params: dict[str, Rational]
    instance: Instance
    truthful: OrdinalProfile
    coalition: Coalition
    truthful_policy: Optional[ZeroGoodPolicy] = None
    manipulated_policy: Optional[ZeroGoodPolicy] = None
    expected_ratios: dict[int, Ratio]
    expected_limit: Ratio = Field(description="Value the ratio approaches as the parameters grow")

    @model_validator(mode="after")
    def check_bundle(self) -> "PaperInstance":
        if set(self.expected_ratios) != set(self.coalition.members):
            raise ValueError("Expected ratios must cover exactly the coalition members")
        if any(is_infinite(r) for r in self.expected_ratios.values()):
            raise ValueError("Expected ratios must be finite")
        if self.truthful.n != self.instance.n or self.truthful.m != self.instance.m:
            raise ValueError("Truthful profile does not match the instance shape")
        return self


# --- closed forms ---

def mnw_gir_expected_ratio(n: int, c: int) -> Fraction:
    return 2 - Fraction(c, n)


def mnw_sgir_expected_ratio(n: int, c: int) -> Fraction:
    """Gain of corrupted agent 0 when the others end exactly at their truthful utility."""
    return 1 + c - Fraction(c * c, n)


def ps_gir_expected_ratio(n: int, c: int, T: int, a: int) -> Fraction:
    """Gain of corrupted agent a (1-based) in the PS construction."""
    return c - c * (Fraction(1, T - 1) - Fraction(1, T ** (a - 1) * (T - 1))) + Fraction(n - c, n)


def rr_sgir_expected_ratios(eps: Fraction) -> dict[int, Fraction]:
    return {0: (2 + eps) / (1 + 2 * eps), 1: 1 / eps}


# --- MNW constructions ---

def _check_coalition_params(n: int, c: int) -> None:
    if not (n > c >= 1):
        raise InvalidParamsError(f"Need n > c >= 1, got n={n}, c={c}")


def _mnw_base(n: int, c: int) -> tuple[Instance, Coalition]:
    rows = []
    for a in range(n):
        if a < c:
            rows.append([1] * n)
        else:
            rows.append([0] * c + [1] * (n - c))
    misreport = {a: [0] * c + [1] * (n - c) for a in range(c)}
    return Instance.from_rows(rows), Coalition.from_rows(misreport)


def mnw_gir_instance(n: int, c: int) -> PaperInstance:
    """
    n goods. Corrupted agents value everything at 1, honest agents value the
    first c goods at 0. Corrupted agents report 0 on the first c goods, which
    then nobody values; corrupted agent a is handed good a.
    """
    _check_coalition_params(n, c)
    inst, coalition = _mnw_base(n, c)
    policy = ZeroGoodPolicy(
        kind=ZeroGoodKind.EXPLICIT,
        shares={g: tuple(Fraction(int(a == g)) for a in range(n)) for g in range(c)},
    )
    return PaperInstance(
        name="mnw-gir",
        mechanism=Mechanism.MNW,
        params={"n": n, "c": c},
        instance=inst,
        truthful=ordinal_from_cardinal(inst),
        coalition=coalition,
        manipulated_policy=policy,
        expected_ratios={a: mnw_gir_expected_ratio(n, c) for a in range(c)},
        expected_limit=Fraction(2),
    )


def mnw_sgir_instance(n: int, c: int) -> PaperInstance:
    """
    Same instance and misreport as ``mnw_gir_instance``. The freed goods are
    split so that corrupted agents 1..c-1 get 1/n of each (total c/n, back at
    their truthful utility) and corrupted agent 0 gets the rest.
    """
    _check_coalition_params(n, c)
    inst, coalition = _mnw_base(n, c)
    column = tuple(
        Fraction(n - c + 1, n) if a == 0 else Fraction(1, n) if a < c else Fraction(0)
        for a in range(n)
    )
    policy = ZeroGoodPolicy(kind=ZeroGoodKind.EXPLICIT, shares={g: column for g in range(c)})
    expected = {a: Fraction(1) for a in range(c)}
    expected[0] = mnw_sgir_expected_ratio(n, c)
    return PaperInstance(
        name="mnw-sgir",
        mechanism=Mechanism.MNW,
        params={"n": n, "c": c},
        instance=inst,
        truthful=ordinal_from_cardinal(inst),
        coalition=coalition,
        manipulated_policy=policy,
        expected_ratios=expected,
        expected_limit=Fraction(c + 1),
    )


# --- PS construction ---

def ps_gir_instance(n: int, c: int, T: int) -> PaperInstance:
    """
    Goods g_i^(p) for subscript i in 1..n and superscript p in 1..(c+1)T^c,
    stored at index (p-1)*n + (i-1).

    Corrupted agent a values goods with p <= T^a. Honest agents value goods
    with i > c or p > T^c. Ties are broken by smaller superscript, then own
    subscript, then smaller subscript; with these tie-breaks every good
    g_i^(p) goes wholly to agent i.

    Corrupted agent a reports G_0 first (i > c, p <= T^c, truthful order),
    then G_a (i <= c with the superscript in its own band, ordered by
    superscript then subscript), then the goods with p > T^c (truthful
    order), then everything else by subscript then superscript.
    """
    _check_coalition_params(n, c)
    if T <= 1 or T % n:
        raise InvalidParamsError(f"Need T > 1 and n | T, got n={n}, T={T}")
    P = (c + 1) * T**c
    m = n * P
    if m > GENERATOR_GOOD_LIMIT:
        raise InvalidParamsError(f"Construction needs m={m} goods, limit is {GENERATOR_GOOD_LIMIT}")

    def index(i: int, p: int) -> int:
        return (p - 1) * n + (i - 1)

    goods = [(i, p) for p in range(1, P + 1) for i in range(1, n + 1)]

    def value(agent: int, i: int, p: int) -> int:
        if agent <= c:
            return int(p <= T**agent)
        return int(i > c or p > T**c)

    rows = []
    orderings = []
    for agent in range(1, n + 1):
        rows.append([0] * m)
        for i, p in goods:
            rows[-1][index(i, p)] = value(agent, i, p)
        ranked = sorted(goods, key=lambda ip: (-value(agent, *ip), ip[1], ip[0] != agent, ip[0]))
        orderings.append(tuple(index(i, p) for i, p in ranked))

    misreports = {}
    for agent in range(1, c + 1):
        truthful_rank = {g: pos for pos, g in enumerate(orderings[agent - 1])}
        low = sum(T**k for k in range(1, agent))
        g0 = [index(i, p) for i, p in goods if i > c and p <= T**c]
        ga = [index(i, p) for i, p in sorted(goods, key=lambda ip: (ip[1], ip[0])) if i <= c and low < p <= T**agent]
        tail = [index(i, p) for i, p in goods if p > T**c]
        chosen = set(g0) | set(ga) | set(tail)
        rest = [index(i, p) for i, p in sorted(goods) if index(i, p) not in chosen]
        misreports[agent - 1] = (
            sorted(g0, key=truthful_rank.get) + ga + sorted(tail, key=truthful_rank.get) + rest
        )

    logger.debug("Built PS construction with n=%d, c=%d, T=%d (m=%d)", n, c, T, m)
    return PaperInstance(
        name="ps-gir",
        mechanism=Mechanism.PS,
        params={"n": n, "c": c, "T": T},
        instance=Instance.from_rows(rows),
        truthful=OrdinalProfile(orderings=orderings),
        coalition=Coalition.from_orderings(misreports),
        expected_ratios={a - 1: ps_gir_expected_ratio(n, c, T, a) for a in range(1, c + 1)},
        expected_limit=Fraction(c + 1),
    )


# --- RR construction ---

def rr_sgir_instance(eps) -> PaperInstance:
    """Three agents, four goods; agent 0 reorders so that agent 1 gains 1/eps."""
    eps = Fraction(eps)
    if not (0 < eps < Fraction(1, 4)):
        raise InvalidParamsError(f"Need 0 < eps < 1/4, got {eps}")
    inst = Instance.from_rows(
        [
            [1 + 2 * eps, 1 + eps, 1, 0],
            [1 / eps, 1, 0, 0],
            [0, 0, 2, 1],
        ],
        divisible=False,
    )
    truthful = ordinal_from_cardinal(inst)
    coalition = Coalition.from_orderings({0: (2, 1, 0, 3), 1: truthful.orderings[1]})
    return PaperInstance(
        name="rr-sgir",
        mechanism=Mechanism.RR,
        params={"eps": eps},
        instance=inst,
        truthful=truthful,
        coalition=coalition,
        expected_ratios=rr_sgir_expected_ratios(eps),
        expected_limit=INF,
    )


# --- sweep fuel ---

def random_instance(
    n: int,
    m: int,
    family: ValuationFamily = ValuationFamily.BINARY,
    seed: int = 0,
    positive_rows: bool = False,
) -> Instance:
    """
    Reproducible random instance.

    binary: entries in {0, 1}. uniform-rational: p/q with q drawn from
    1..100 and p from 0..q. With ``positive_rows`` all-zero rows are redrawn.
    """
    if n < 1 or m < 1:
        raise InvalidParamsError(f"Need n, m >= 1, got n={n}, m={m}")
    family = ValuationFamily(family)
    rng = np.random.default_rng(seed)

    def draw_row() -> list[Fraction]:
        if family == ValuationFamily.BINARY:
            return [Fraction(int(v)) for v in rng.integers(0, 2, size=m)]
        q = rng.integers(1, 101, size=m)
        p = rng.integers(0, q + 1)
        return [Fraction(int(a), int(b)) for a, b in zip(p, q)]

    rows = []
    for _ in range(n):
        row = draw_row()
        while positive_rows and not any(row):
            row = draw_row()
        rows.append(row)
    return Instance.from_rows(rows)


def all_binary_instances(n: int, m: int) -> Iterator[Instance]:
    """Every 0/1 instance of the given shape, row-major bit order."""
    for bits in itertools.product((0, 1), repeat=n * m):
        yield Instance.from_rows([bits[a * m:(a + 1) * m] for a in range(n)])


def random_manipulation(inst: Instance, c: int, seed: int) -> Coalition:
    """A random coalition of size 1..c with uniformly random orderings as misreports."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(1, min(c, inst.n) + 1))
    members = sorted(int(a) for a in rng.choice(inst.n, size=size, replace=False))
    return Coalition.from_orderings({a: tuple(int(g) for g in rng.permutation(inst.m)) for a in members})
