"""Integration tests for the bundled example files."""

from fractions import Fraction
from pathlib import Path

from src.core.serialization import load_instance, load_model
from src.simulation.incentives import Mechanism, evaluate_manipulation
from src.simulation.instances import PaperInstance, rr_sgir_instance

DATA = Path(__file__).resolve().parents[2] / "data"


def test_rr_bundle_matches_generator():
    """Test that the stored RR bundle equals a fresh generator run."""
    bundle = load_model(PaperInstance, DATA / "rr_sgir_eps_1_100.json")

    assert bundle == rr_sgir_instance(Fraction(1, 100))
    report = evaluate_manipulation(Mechanism.RR, bundle.instance, bundle.coalition, truthful=bundle.truthful)
    assert report.per_agent == bundle.expected_ratios


def test_example_instances_load():
    """Test the plain instance files."""
    assert load_instance(DATA / "symmetric_2x2.json").n == 2
    assert load_instance(DATA / "three_agents.json").valuations[1][0] == Fraction(1, 2)
