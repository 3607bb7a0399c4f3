"""End-to-end checks of the mechanisms, the reduction and the manipulation bounds."""

import math
from fractions import Fraction
from itertools import combinations_with_replacement, permutations, product

import numpy as np
import pytest

from src.core.fisher import mnw_allocate, proportional_response_solve, rationalize_allocation, verify_equilibrium
from src.core.mechanisms import couple_ps_with_rr, probabilistic_serial, round_robin, trace_violations
from src.core.models import OrdinalProfile
from src.core.valuations import is_ef1, is_envy_free, nash_welfare, ordinal_from_cardinal
from src.simulation.batch_runner import SweepRunner
from src.simulation.incentives import Mechanism, evaluate_manipulation, mnw_manipulation_ratio, reduction_dominance
from src.simulation.instances import (
    ValuationFamily,
    all_binary_instances,
    mnw_gir_instance,
    mnw_sgir_instance,
    ps_gir_instance,
    random_instance,
    random_manipulation,
    rr_sgir_instance,
)


def _market_instances():
    """100 seeded instances with n, m <= 3 and positive rows."""
    rng = np.random.default_rng(2024)
    return [
        random_instance(
            int(rng.integers(1, 4)), int(rng.integers(1, 4)),
            ValuationFamily.UNIFORM_RATIONAL, seed=seed, positive_rows=True,
        )
        for seed in range(100)
    ]


MARKET_INSTANCES = _market_instances()


# --- the reduction ---

@pytest.mark.parametrize("n,m", [(2, 2), (2, 3), (3, 2), (3, 3)])
def test_ps_equals_ps_via_rr_on_every_profile(n, m):
    """Test exact equality of PS and RR over copies for every profile."""
    for orderings in product(permutations(range(m)), repeat=n):
        profile = OrdinalProfile(orderings=orderings)
        assert couple_ps_with_rr(profile).allocation == probabilistic_serial(profile)[0]


def test_step_durations_scale_to_integers():
    """Test t * (n!)^k integrality on 1000 random instances."""
    rng = np.random.default_rng(7)
    for seed in range(1000):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        inst = random_instance(n, m, ValuationFamily.UNIFORM_RATIONAL, seed=seed)
        alloc, trace = probabilistic_serial(ordinal_from_cardinal(inst))
        fact = math.factorial(n)
        for k, step in enumerate(trace.steps, start=1):
            assert (step.t * fact**k).denominator == 1
        assert trace_violations(trace, alloc) == []


# --- lower-bound constructions ---

def test_rr_construction_exact():
    """Test the RR construction at eps = 1/100."""
    bundle = rr_sgir_instance(Fraction(1, 100))
    report = evaluate_manipulation(Mechanism.RR, bundle.instance, bundle.coalition, truthful=bundle.truthful)

    assert report.per_agent[1] == 100
    assert report.per_agent[0] == Fraction(201, 102)
    assert report.all_weakly_better


def test_mnw_constructions():
    """Test both MNW constructions at n=4, c=2."""
    gir = mnw_gir_instance(4, 2)
    report = mnw_manipulation_ratio(gir.instance, gir.coalition, gir.truthful_policy, gir.manipulated_policy, tol=1e-10)
    for a in (0, 1):
        assert float(report.per_agent[a]) == pytest.approx(1.5, rel=1e-5)

    sgir = mnw_sgir_instance(4, 2)
    report = mnw_manipulation_ratio(sgir.instance, sgir.coalition, sgir.truthful_policy, sgir.manipulated_policy, tol=1e-10)
    assert float(report.per_agent[0]) == pytest.approx(2.0, rel=1e-5)
    assert float(report.per_agent[1]) == pytest.approx(1.0, rel=1e-5)


@pytest.mark.parametrize(
    "n,c,T,expected",
    [
        (2, 1, 2, {0: Fraction(3, 2)}),
        (4, 1, 4, {0: Fraction(7, 4)}),
        (3, 2, 3, {0: Fraction(7, 3), 1: Fraction(5, 3)}),
    ],
)
def test_ps_construction_exact(n, c, T, expected):
    """Test the PS construction against its closed form."""
    bundle = ps_gir_instance(n, c, T)
    report = evaluate_manipulation(Mechanism.PS, bundle.instance, bundle.coalition, truthful=bundle.truthful)

    assert report.per_agent == expected
    assert bundle.expected_ratios == expected


# --- upper-bound ceilings ---

@pytest.mark.slow
@pytest.mark.parametrize("mechanism", [Mechanism.RR, Mechanism.PS])
@pytest.mark.parametrize("c", [1, 2])
def test_binary_three_by_three_ceilings(mechanism, c):
    """Test every ceiling over all 512 binary 3 x 3 instances."""
    runner = SweepRunner(mechanism, c)
    records = runner.run_batch(all_binary_instances(3, 3))

    assert len(records) == 512
    for record in records:
        result = record.result
        assert record.violations == [], (record.instance_id, record.violations)
        assert result.empirical_ir <= 2
        assert result.empirical_gir <= c + 1
        if mechanism == Mechanism.PS:
            assert result.empirical_sgir <= c + 1
        if result.sgir_feasible_count:
            assert result.empirical_gir <= result.empirical_sgir


@pytest.mark.slow
@pytest.mark.parametrize("mechanism", [Mechanism.RR, Mechanism.PS])
def test_rational_three_by_three_ceilings_and_monotonicity(mechanism):
    """Test the ceilings on seeded uniform-rational 3 x 3 instances, and that c=2 never lowers a c=1 aggregate."""
    instances = [random_instance(3, 3, ValuationFamily.UNIFORM_RATIONAL, seed=seed) for seed in range(40)]
    by_c = {c: SweepRunner(mechanism, c).run_batch(instances) for c in (1, 2)}

    for c, records in by_c.items():
        for record in records:
            assert record.violations == [], (c, record.instance_id, record.violations)
    for one, two in zip(by_c[1], by_c[2]):
        for aggregate in ("empirical_ir", "empirical_gir", "empirical_sgir"):
            assert getattr(two.result, aggregate) >= getattr(one.result, aggregate), (one.instance_id, aggregate)

# --- markets ---

def _grid_columns(n: int, steps: int = 20) -> np.ndarray:
    """Every split of one good into n shares on a 1/steps grid."""
    columns = []
    for cuts in combinations_with_replacement(range(steps + 1), n - 1):
        bounds = (0,) + cuts + (steps,)
        columns.append([(bounds[i + 1] - bounds[i]) / steps for i in range(n)])
    return np.array(columns)


def _grid_best_log_nw(V: np.ndarray) -> float:
    """Largest mean log-utility over the grid; the first good is looped, the rest broadcast."""
    n, m = V.shape
    columns = _grid_columns(n)
    contrib = [columns * V[:, g] for g in range(m)]
    rest = np.zeros((1, n))
    for g in range(1, m):
        rest = (rest[:, None, :] + contrib[g][None, :, :]).reshape(-1, n)
    best = -np.inf
    with np.errstate(divide="ignore"):
        for first in contrib[0]:
            best = max(best, float(np.max(np.mean(np.log(first + rest), axis=1))))
    return best


@pytest.mark.slow
def test_market_equilibrium_quality():
    """Test residuals and Nash-welfare optimality on 100 random markets."""
    rng = np.random.default_rng(99)
    for inst in MARKET_INSTANCES:
        outcome = proportional_response_solve(inst, tol=1e-10)
        assert verify_equilibrium(inst, outcome, tol=1e-9).worst <= 1e-6

        alloc = mnw_allocate(inst, tol=1e-10)
        best = nash_welfare(inst, alloc)
        V = np.array([[float(v) for v in row] for row in inst.valuations])
        assert best >= math.exp(_grid_best_log_nw(V)) - 1e-6

        samples = rng.dirichlet(np.ones(inst.n), size=(10_000, inst.m)).transpose(0, 2, 1)
        utilities = np.einsum("ag,sag->sa", V, samples)
        with np.errstate(divide="ignore"):
            sampled = np.exp(np.mean(np.log(utilities), axis=1))
        assert best >= float(sampled.max()) - 1e-6


def test_truthful_fairness():
    """Test EF for PS and MNW and EF1 for RR on the market instances."""
    for inst in MARKET_INSTANCES:
        profile = ordinal_from_cardinal(inst)
        assert is_envy_free(inst, probabilistic_serial(profile)[0])
        assert is_ef1(inst, round_robin(profile)[0])
        # shares at denominator 10^9; the solver certifies residuals to 10^-6
        shares = rationalize_allocation(proportional_response_solve(inst).allocation_array(), max_denominator=10**9)
        assert is_envy_free(inst, shares, tol=Fraction(1, 10**6))


# --- binary reduction ---

@pytest.mark.parametrize("mechanism", [Mechanism.RR, Mechanism.PS])
def test_binary_reduction_dominates(mechanism):
    """Test that the 0/1 reduction never gains less than the cardinal valuation."""
    rng = np.random.default_rng(5)
    for seed in range(250):
        n, m = int(rng.integers(2, 4)), int(rng.integers(2, 5))
        inst = random_instance(n, m, ValuationFamily.UNIFORM_RATIONAL, seed=seed)
        coalition = random_manipulation(inst, 2, seed)
        for cardinal, binary in reduction_dominance(mechanism, inst, coalition).values():
            assert binary >= cardinal
