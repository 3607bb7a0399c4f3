"""Unit tests for Round-Robin, Probabilistic Serial and PS via RR."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from src.core.errors import InvalidTError
from src.core.mechanisms import (
    PAPER_T_LIMIT,
    couple_ps_with_rr,
    coupling_violations,
    expand_profile,
    lift_valuations,
    minimal_coupling_T,
    paper_coupling_T,
    probabilistic_serial,
    ps_via_rr,
    round_robin,
    trace_violations,
)
from src.core.models import Instance, OrdinalProfile
from src.core.valuations import is_ef1, is_envy_free, ordinal_from_cardinal, utility

HALF = Fraction(1, 2)


@st.composite
def profiles(draw, max_n=3, max_m=4):
    """Random strict profiles over small instances."""
    n = draw(st.integers(min_value=1, max_value=max_n))
    m = draw(st.integers(min_value=1, max_value=max_m))
    orderings = [tuple(draw(st.permutations(range(m)))) for _ in range(n)]
    return OrdinalProfile(orderings=orderings)


@st.composite
def instances(draw, max_n=3, max_m=4):
    n = draw(st.integers(min_value=1, max_value=max_n))
    m = draw(st.integers(min_value=1, max_value=max_m))
    value = st.fractions(min_value=0, max_value=5, max_denominator=6)
    return Instance.from_rows([[draw(value) for _ in range(m)] for _ in range(n)])


# --- Round-Robin ---

def test_round_robin_alternates_on_identical_orderings():
    """Test that identical orderings make agents alternate."""
    profile = OrdinalProfile(orderings=[(0, 1, 2, 3), (0, 1, 2, 3)])
    alloc, trace = round_robin(profile)

    assert alloc.bundles == ((0, 2), (1, 3))
    assert [s.agent for s in trace.stages] == [0, 1, 0, 1]


def _rr_sgir_rows(eps):
    return [[1 + 2 * eps, 1 + eps, 1, 0], [1 / eps, 1, 0, 0], [0, 0, 2, 1]]


def test_round_robin_three_agent_truthful():
    """Test the three-agent, four-good profile used by the RR lower bound."""
    inst = Instance.from_rows(_rr_sgir_rows(Fraction(1, 100)))
    profile = ordinal_from_cardinal(inst)
    alloc, _ = round_robin(profile)

    assert profile.orderings[2] == (2, 3, 0, 1)
    assert str(alloc) == "({g1,g4}, {g2}, {g3})"


def test_round_robin_three_agent_manipulated():
    """Test the same profile after agent 0 moves good 2 to the front."""
    profile = ordinal_from_cardinal(Instance.from_rows(_rr_sgir_rows(Fraction(1, 100))))
    alloc, _ = round_robin(profile.replace({0: (2, 1, 0, 3)}))

    assert str(alloc) == "({g2,g3}, {g1}, {g4})"


def test_round_robin_partial_last_round():
    """Test that m need not be a multiple of n."""
    profile = OrdinalProfile(orderings=[(0, 1, 2), (1, 0, 2)])
    alloc, trace = round_robin(profile)

    assert alloc.bundles == ((0, 2), (1,))
    assert len(trace.stages) == 3


@given(instances())
@settings(max_examples=60, deadline=None)
def test_round_robin_is_ef1(inst):
    """Test that RR on truthful orderings is EF1."""
    alloc, _ = round_robin(ordinal_from_cardinal(inst))
    assert is_ef1(inst, alloc)


# --- Probabilistic Serial ---

def test_ps_disjoint_favorites():
    """Test that agents with different favourites keep them."""
    alloc, trace = probabilistic_serial(OrdinalProfile(orderings=[(0, 1), (1, 0)]))

    assert alloc.shares == ((1, 0), (0, 1))
    assert trace.K == 1


def test_ps_symmetric_profile():
    """Test that identical orderings split everything equally."""
    alloc, trace = probabilistic_serial(OrdinalProfile(orderings=[(0, 1), (0, 1)]))

    assert alloc.shares == ((HALF, HALF), (HALF, HALF))
    assert [s.t for s in trace.steps] == [HALF, HALF]
    assert minimal_coupling_T(trace) == 2


def test_ps_hand_traced_profile():
    """Test a three-good profile where two goods finish together."""
    alloc, trace = probabilistic_serial(OrdinalProfile(orderings=[(0, 1, 2), (1, 0, 2)]))

    assert alloc.shares == ((1, 0, HALF), (0, 1, HALF))
    assert [s.t for s in trace.steps] == [1, HALF]
    assert trace.steps[0].finished == (0, 1)
    assert trace.steps[0].available == (2,)
    assert trace.eaten_by(1) == {0: 2, 1: 2}
    assert minimal_coupling_T(trace) == 2


def test_ps_snapshot_bounds():
    """Test partial allocations along the trace."""
    _, trace = probabilistic_serial(OrdinalProfile(orderings=[(0, 1), (0, 1)]))

    assert trace.snapshot(0) == ((0, 0), (0, 0))
    assert trace.snapshot(1) == ((HALF, 0), (HALF, 0))
    with pytest.raises(ValueError):
        trace.snapshot(3)


@given(profiles())
@settings(max_examples=80, deadline=None)
def test_ps_trace_properties(profile):
    """Test the structural trace properties on random profiles."""
    alloc, trace = probabilistic_serial(profile)

    assert trace_violations(trace, alloc) == []
    assert trace.total_time == Fraction(profile.m, profile.n)
    for a in range(profile.n):
        assert alloc.agent_mass(a) == Fraction(profile.m, profile.n)


@given(instances())
@settings(max_examples=60, deadline=None)
def test_ps_is_envy_free(inst):
    """Test that PS on truthful orderings is envy-free."""
    alloc, _ = probabilistic_serial(ordinal_from_cardinal(inst))
    assert is_envy_free(inst, alloc)


# --- coupling ---

def test_expand_profile_orders_copies():
    """Test copy indices g*T + k in preference order."""
    universe = expand_profile(OrdinalProfile(orderings=[(1, 0)]), 2)

    assert universe.orderings == ((2, 3, 0, 1),)
    assert universe.original(3) == 1
    assert list(universe.copies_of(0)) == [0, 1]


def test_expand_profile_identity_and_single_good():
    """Test T=1 and a single good."""
    assert expand_profile(OrdinalProfile(orderings=[(1, 0, 2)]), 1).orderings == ((1, 0, 2),)
    assert expand_profile(OrdinalProfile(orderings=[(0,)]), 3).orderings == ((0, 1, 2),)


def test_coupling_symmetric_profile():
    """Test RR over two copies of each good on the symmetric profile."""
    result = couple_ps_with_rr(OrdinalProfile(orderings=[(0, 1), (0, 1)]), T=2)

    assert [s.good for s in result.rr_trace.stages] == [0, 1, 2, 3]
    assert result.allocation.shares == ((HALF, HALF), (HALF, HALF))
    assert coupling_violations(result) == []


def test_coupling_rejects_fractional_steps():
    """Test that T must turn every step duration into whole rounds."""
    profile = OrdinalProfile(orderings=[(0, 1), (0, 1)])

    with pytest.raises(InvalidTError):
        couple_ps_with_rr(profile, T=3)
    with pytest.raises(InvalidTError):
        couple_ps_with_rr(profile, T=0)
    with pytest.raises(InvalidTError):
        couple_ps_with_rr(profile, T=2, paper_T=True)


def test_paper_T():
    """Test (n!)^m copies and its size guard."""
    profile = OrdinalProfile(orderings=[(0, 1), (1, 0)])
    result = couple_ps_with_rr(profile, paper_T=True)

    assert result.T == 4
    assert result.allocation == probabilistic_serial(profile)[0]
    assert paper_coupling_T(3, 2) == 36
    with pytest.raises(InvalidTError):
        paper_coupling_T(4, 5)
    assert 5 * 24**5 > PAPER_T_LIMIT


@given(profiles())
@settings(max_examples=80, deadline=None)
def test_ps_via_rr_matches_ps(profile):
    """Test that RR over copies reproduces PS exactly."""
    direct, trace = probabilistic_serial(profile)
    result = couple_ps_with_rr(profile)

    assert result.allocation == direct
    assert coupling_violations(result) == []
    assert math.factorial(profile.n) ** profile.m % result.T == 0


def test_ps_via_rr_wrapper():
    """Test the allocation-only entry point."""
    profile = OrdinalProfile(orderings=[(0, 1, 2), (1, 0, 2)])
    assert ps_via_rr(profile) == probabilistic_serial(profile)[0]


def test_lift_valuations_splits_each_good():
    """Test copy values v_a(g) / T in copy-index order."""
    lifted = lift_valuations(Instance.from_rows([[2, 1]]), 2)

    assert lifted.m == 4
    assert lifted.valuations[0] == (1, 1, HALF, HALF)
    assert not lifted.divisible
    with pytest.raises(InvalidTError):
        lift_valuations(Instance.from_rows([[1]]), 0)


@given(instances())
@settings(max_examples=60, deadline=None)
def test_copy_bundles_carry_ps_utility(inst):
    """Test that an agent's RR copy bundle is worth exactly its PS share value."""
    result = couple_ps_with_rr(ordinal_from_cardinal(inst))
    lifted = lift_valuations(inst, result.T)
    rr_alloc, _ = round_robin(result.universe.profile())

    for a in range(inst.n):
        assert utility(lifted, a, rr_alloc.bundle(a)) == utility(inst, a, result.allocation.row(a))
