"""Unit tests for the instance generators."""

from fractions import Fraction

import pytest

from src.core.errors import InvalidParamsError
from src.core.mechanisms import probabilistic_serial
from src.core.rational import INF
from src.simulation.incentives import Mechanism
from src.simulation.instances import (
    ValuationFamily,
    all_binary_instances,
    mnw_gir_expected_ratio,
    mnw_gir_instance,
    mnw_sgir_expected_ratio,
    mnw_sgir_instance,
    ps_gir_expected_ratio,
    ps_gir_instance,
    random_instance,
    random_manipulation,
    rr_sgir_expected_ratios,
    rr_sgir_instance,
)


def test_mnw_gir_instance_shape():
    """Test the MNW construction rows and misreports."""
    bundle = mnw_gir_instance(4, 2)

    assert bundle.mechanism == Mechanism.MNW
    assert bundle.instance.valuations[0] == (1, 1, 1, 1)
    assert bundle.instance.valuations[3] == (0, 0, 1, 1)
    assert bundle.coalition.cardinal == {0: (0, 0, 1, 1), 1: (0, 0, 1, 1)}
    assert bundle.expected_ratios == {0: Fraction(3, 2), 1: Fraction(3, 2)}
    assert bundle.expected_limit == 2


def test_mnw_closed_forms():
    """Test the MNW gain formulas."""
    assert mnw_gir_expected_ratio(4, 2) == Fraction(3, 2)
    assert mnw_sgir_expected_ratio(4, 2) == 2
    assert mnw_sgir_expected_ratio(10, 3) == Fraction(31, 10)


def test_mnw_sgir_instance_split():
    """Test that the freed goods favour corrupted agent 0."""
    bundle = mnw_sgir_instance(4, 2)
    column = bundle.manipulated_policy.shares[0]

    assert column == (Fraction(3, 4), Fraction(1, 4), 0, 0)
    assert sum(column) == 1
    assert bundle.expected_ratios == {0: 2, 1: 1}
    assert bundle.expected_limit == 3


@pytest.mark.parametrize("n,c", [(2, 2), (3, 0), (1, 1)])
def test_mnw_invalid_params(n, c):
    """Test that n > c >= 1 is required."""
    with pytest.raises(InvalidParamsError):
        mnw_gir_instance(n, c)


def test_ps_closed_form_values():
    """Test the PS gain formula at small parameters."""
    assert ps_gir_expected_ratio(2, 1, 2, 1) == Fraction(3, 2)
    assert ps_gir_expected_ratio(4, 1, 4, 1) == Fraction(7, 4)
    assert ps_gir_expected_ratio(3, 2, 3, 1) == Fraction(7, 3)
    assert ps_gir_expected_ratio(3, 2, 3, 2) == Fraction(5, 3)


def test_ps_gir_instance_shape():
    """Test the PS construction for n=2, c=1, T=2."""
    bundle = ps_gir_instance(2, 1, 2)

    assert bundle.instance.n == 2
    assert bundle.instance.m == 8
    # corrupted agent values the first two superscripts only
    assert bundle.instance.valuations[0] == (1, 1, 1, 1, 0, 0, 0, 0)
    assert bundle.instance.valuations[1] == (0, 1, 0, 1, 1, 1, 1, 1)
    assert bundle.coalition.ordinal == {0: (1, 3, 0, 2, 4, 5, 6, 7)}
    assert bundle.expected_ratios == {0: Fraction(3, 2)}


@pytest.mark.parametrize("n,c,T", [(2, 1, 2), (3, 2, 3), (4, 1, 4)])
def test_ps_gir_truthful_run_gives_each_subscript_to_its_agent(n, c, T):
    """Test that under truthful reports every good g_i^(p) goes wholly to agent i."""
    bundle = ps_gir_instance(n, c, T)
    alloc, _ = probabilistic_serial(bundle.truthful)

    for g in range(bundle.instance.m):
        owner = g % n
        assert alloc.shares[owner][g] == 1, f"good {g} not owned by agent {owner}"


@pytest.mark.parametrize("n,c,T", [(2, 1, 3), (2, 1, 1), (2, 2, 2), (5, 4, 5)])
def test_ps_invalid_params(n, c, T):
    """Test divisibility, coalition and size guards."""
    with pytest.raises(InvalidParamsError):
        ps_gir_instance(n, c, T)


def test_rr_sgir_instance():
    """Test the three-agent RR construction."""
    bundle = rr_sgir_instance(Fraction(1, 100))

    assert bundle.instance.valuations[1] == (100, 1, 0, 0)
    assert not bundle.instance.divisible
    assert bundle.coalition.ordinal[0] == (2, 1, 0, 3)
    assert bundle.expected_ratios == {0: Fraction(201, 102), 1: Fraction(100)}
    assert bundle.expected_limit == INF
    assert rr_sgir_expected_ratios(Fraction(1, 10)) == {0: Fraction(21, 12), 1: 10}


@pytest.mark.parametrize("eps", [0, Fraction(1, 4), Fraction(-1, 10)])
def test_rr_sgir_invalid_eps(eps):
    """Test that 0 < eps < 1/4 is required."""
    with pytest.raises(InvalidParamsError):
        rr_sgir_instance(eps)


def test_bundle_round_trips_through_json():
    """Test that a generated bundle validates from its own JSON dump."""
    bundle = rr_sgir_instance(Fraction(1, 100))
    data = bundle.model_dump(mode="json")

    assert data["expected_limit"] == "inf"
    assert type(bundle).model_validate(data) == bundle


def test_random_instance_is_seeded():
    """Test reproducibility and value ranges of the random families."""
    a = random_instance(3, 4, ValuationFamily.UNIFORM_RATIONAL, seed=11)
    b = random_instance(3, 4, ValuationFamily.UNIFORM_RATIONAL, seed=11)

    assert a == b
    assert all(0 <= v <= 1 for row in a.valuations for v in row)
    binary = random_instance(4, 3, seed=5, positive_rows=True)
    assert all(v in (0, 1) for row in binary.valuations for v in row)
    assert all(any(row) for row in binary.valuations)
    with pytest.raises(InvalidParamsError):
        random_instance(0, 3)


def test_all_binary_instances():
    """Test that every 0/1 matrix appears once."""
    instances = list(all_binary_instances(2, 2))

    assert len(instances) == 16
    assert len({inst.valuations for inst in instances}) == 16


def test_random_manipulation():
    """Test that random coalitions respect the size bound."""
    inst = random_instance(4, 3, seed=1)
    for seed in range(20):
        coalition = random_manipulation(inst, 2, seed)
        assert 1 <= coalition.size <= 2
        assert all(sorted(o) == [0, 1, 2] for o in coalition.ordinal.values())
