"""Core data models for collusion-lab."""

from collections.abc import Iterable, Mapping, Sequence
from fractions import Fraction
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .rational import Rational


class FrozenModel(BaseModel):
    """Immutable base for all domain values."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")


class Instance(FrozenModel):
    """
    An allocation instance: n agents, m goods, additive valuations.

    Construction only checks that the matrix has shape n x m. Sign and
    emptiness invariants are checked by ``validate_instance`` so that a
    bad file can be reported precisely instead of failing in the parser.
    """

    n: int = Field(ge=0, description="Number of agents")
    m: int = Field(ge=0, description="Number of goods")
    divisible: bool = Field(default=True, description="Fractional (True) or integral (False) regime")
    valuations: tuple[tuple[Rational, ...], ...] = Field(
        description="valuations[a][g] = v_a(g), exact rationals"
    )

    @model_validator(mode="after")
    def check_shape(self) -> "Instance":
        if len(self.valuations) != self.n:
            raise ValueError(f"Expected {self.n} valuation rows, got {len(self.valuations)}")
        for a, row in enumerate(self.valuations):
            if len(row) != self.m:
                raise ValueError(f"Row {a} has {len(row)} entries, expected {self.m}")
        return self

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence], divisible: bool = True) -> "Instance":
        """Build an instance from a nested list of rationals (or rational strings)."""
        rows = [list(r) for r in rows]
        m = len(rows[0]) if rows else 0
        return cls(n=len(rows), m=m, divisible=divisible, valuations=rows)

    def value(self, agent: int, good: int) -> Fraction:
        return self.valuations[agent][good]

    def with_rows(self, replacements: Mapping[int, Sequence]) -> "Instance":
        """Copy of this instance where the given agents' rows are replaced."""
        rows = [replacements.get(a, row) for a, row in enumerate(self.valuations)]
        return Instance(n=self.n, m=self.m, divisible=self.divisible, valuations=rows)

    def __str__(self) -> str:
        lines = [f"Instance(n={self.n}, m={self.m}, divisible={self.divisible})"]
        for a, row in enumerate(self.valuations):
            lines.append(f"  v_{a}: " + " ".join(str(v) for v in row))
        return "\n".join(lines)


class OrdinalProfile(FrozenModel):
    """One strict preference ordering per agent, most preferred good first."""

    orderings: tuple[tuple[int, ...], ...] = Field(
        description="orderings[a] is a permutation of range(m)"
    )

    @field_validator("orderings")
    @classmethod
    def check_permutations(cls, v: tuple[tuple[int, ...], ...]) -> tuple[tuple[int, ...], ...]:
        if not v:
            raise ValueError("A profile needs at least one agent")
        m = len(v[0])
        for a, ordering in enumerate(v):
            if len(ordering) != m:
                raise ValueError(f"Ordering {a} has length {len(ordering)}, expected {m}")
            if sorted(ordering) != list(range(m)):
                raise ValueError(f"Ordering {a} is not a permutation of 0..{m - 1}: {ordering}")
        return v

    @property
    def n(self) -> int:
        return len(self.orderings)

    @property
    def m(self) -> int:
        return len(self.orderings[0])

    def replace(self, replacements: Mapping[int, Sequence[int]]) -> "OrdinalProfile":
        """Profile with some agents' orderings swapped for misreports."""
        return OrdinalProfile(
            orderings=[replacements.get(a, o) for a, o in enumerate(self.orderings)]
        )

    def rank(self, agent: int) -> dict[int, int]:
        """Position of each good in the agent's ordering (0 = favourite)."""
        return {g: pos for pos, g in enumerate(self.orderings[agent])}


class FractionalAllocation(FrozenModel):
    """Divisible-goods allocation, shares[a][g] = x_{a,g}; every column sums to exactly 1."""

    shares: tuple[tuple[Rational, ...], ...]

    @field_validator("shares")
    @classmethod
    def check_columns(cls, v: tuple[tuple[Fraction, ...], ...]) -> tuple[tuple[Fraction, ...], ...]:
        if not v:
            raise ValueError("An allocation needs at least one agent")
        m = len(v[0])
        for a, row in enumerate(v):
            if len(row) != m:
                raise ValueError(f"Row {a} has length {len(row)}, expected {m}")
            for g, x in enumerate(row):
                if x < 0 or x > 1:
                    raise ValueError(f"Share x[{a}][{g}] = {x} outside [0, 1]")
        for g in range(m):
            total = sum((row[g] for row in v), Fraction(0))
            if total != 1:
                raise ValueError(f"Column {g} sums to {total}, expected exactly 1")
        return v

    @property
    def n(self) -> int:
        return len(self.shares)

    @property
    def m(self) -> int:
        return len(self.shares[0])

    def row(self, agent: int) -> tuple[Fraction, ...]:
        return self.shares[agent]

    def matrix(self) -> tuple[tuple[Fraction, ...], ...]:
        return self.shares

    def agent_mass(self, agent: int) -> Fraction:
        return sum(self.shares[agent], Fraction(0))


class IntegralAllocation(FrozenModel):
    """Indivisible-goods allocation: a partition of range(m) into n bundles."""

    m: int = Field(ge=0)
    bundles: tuple[tuple[int, ...], ...] = Field(description="Sorted good indices per agent")

    @field_validator("bundles")
    @classmethod
    def sort_bundles(cls, v: tuple[tuple[int, ...], ...]) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(sorted(b)) for b in v)

    @model_validator(mode="after")
    def check_partition(self) -> "IntegralAllocation":
        seen: set[int] = set()
        for a, bundle in enumerate(self.bundles):
            for g in bundle:
                if g in seen:
                    raise ValueError(f"Good {g} assigned twice (again to agent {a})")
                seen.add(g)
        if seen != set(range(self.m)):
            missing = sorted(set(range(self.m)) - seen)
            extra = sorted(seen - set(range(self.m)))
            raise ValueError(f"Bundles do not partition 0..{self.m - 1} (missing {missing}, extra {extra})")
        return self

    @property
    def n(self) -> int:
        return len(self.bundles)

    def bundle(self, agent: int) -> frozenset[int]:
        return frozenset(self.bundles[agent])

    def matrix(self) -> tuple[tuple[Fraction, ...], ...]:
        """0/1 share matrix of this allocation."""
        rows = []
        for bundle in self.bundles:
            owned = set(bundle)
            rows.append(tuple(Fraction(1) if g in owned else Fraction(0) for g in range(self.m)))
        return tuple(rows)

    def __str__(self) -> str:
        return "(" + ", ".join("{" + ",".join(f"g{g + 1}" for g in b) + "}" for b in self.bundles) + ")"


class Coalition(FrozenModel):
    """
    A set of corrupted agents together with their misreports.

    Ordinal misreports (replacement orderings) feed RR and PS; cardinal
    misreports (replacement valuation rows) feed MNW. Exactly one kind is set,
    with one entry per member.
    """

    members: tuple[int, ...] = Field(description="Corrupted agents, ascending")
    ordinal: Optional[dict[int, tuple[int, ...]]] = None
    cardinal: Optional[dict[int, tuple[Rational, ...]]] = None

    @field_validator("members")
    @classmethod
    def check_members(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if len(v) < 1:
            raise ValueError("A coalition needs at least one member")
        if len(set(v)) != len(v):
            raise ValueError(f"Duplicate coalition members: {v}")
        if any(a < 0 for a in v):
            raise ValueError(f"Negative agent index in coalition: {v}")
        return tuple(sorted(v))

    @model_validator(mode="after")
    def check_misreports(self) -> "Coalition":
        if (self.ordinal is None) == (self.cardinal is None):
            raise ValueError("Exactly one of ordinal or cardinal misreports must be given")
        reports = self.ordinal if self.ordinal is not None else self.cardinal
        if set(reports) != set(self.members):
            raise ValueError(
                f"Misreports given for {sorted(reports)}, members are {list(self.members)}"
            )
        return self

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def is_ordinal(self) -> bool:
        return self.ordinal is not None

    @classmethod
    def from_orderings(cls, reports: Mapping[int, Iterable[int]]) -> "Coalition":
        return cls(members=tuple(reports), ordinal={a: tuple(o) for a, o in reports.items()})

    @classmethod
    def from_rows(cls, reports: Mapping[int, Iterable]) -> "Coalition":
        return cls(members=tuple(reports), cardinal={a: tuple(r) for a, r in reports.items()})
