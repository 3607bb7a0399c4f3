import logging
import multiprocessing
import os
import sys
import time
from collections.abc import Iterable
from fractions import Fraction
from typing import Optional

import pandas as pd

from ..core.models import FrozenModel, Instance
from ..core.rational import format_ratio, is_infinite
from .incentives import Mechanism, RatioReport, SearchResult, exhaustive_search

logger = logging.getLogger(__name__)

MNW_SLACK = Fraction(1, 10**5)


class SweepRecord(FrozenModel):
    instance_id: int
    instance: Instance
    result: SearchResult
    violations: list[str]


def ceiling_violations(result: SearchResult) -> list[str]:
    """
    Upper bounds every exhaustive search must respect.

    RR and PS: incentive ratio <= 2 and GIR <= c+1. PS additionally keeps
    every corrupted agent within c+1, with or without weak improvement. In
    RR the first picker of a corrupted coalition stays within c+1. GIR never
    exceeds SGIR.
    """
    c1 = Fraction(result.c + 1)
    problems = []

    def check(label: str, value, bound) -> None:
        if value is not None and not is_infinite(value) and value > bound:
            problems.append(f"{label} = {format_ratio(value)} exceeds {format_ratio(bound)}")

    check("ir", result.empirical_ir, Fraction(2))
    check("gir", result.empirical_gir, c1)
    if result.mechanism == Mechanism.PS:
        check("sgir", result.empirical_sgir, c1)
        check("unconditional max", result.empirical_unconditional_max, c1)
    if result.mechanism == Mechanism.RR:
        check("first picker", result.first_picker_max, c1)
    if result.sgir_feasible_count and result.empirical_gir > result.empirical_sgir:
        problems.append(
            f"gir = {format_ratio(result.empirical_gir)} exceeds sgir = {format_ratio(result.empirical_sgir)}"
        )
    return problems


def mnw_probe_violations(reports: Iterable[RatioReport], c: int) -> list[str]:
    """
    MNW ceilings for explicit manipulations: the least-gaining corrupted agent
    stays within 2, and a weakly improving manipulation gives nobody more than
    c+1. Allocations come from a numeric solver, so a relative slack applies.
    """
    problems = []
    for i, report in enumerate(reports):
        if not is_infinite(report.min_ratio) and report.min_ratio > 2 * (1 + MNW_SLACK):
            problems.append(f"probe {i}: min ratio {format_ratio(report.min_ratio)} exceeds 2")
        bound = (c + 1) * (1 + MNW_SLACK)
        if report.all_weakly_better and not is_infinite(report.max_ratio) and report.max_ratio > bound:
            problems.append(f"probe {i}: max ratio {format_ratio(report.max_ratio)} exceeds {c + 1}")
    return problems


def _run_single_search(args: tuple) -> SweepRecord:
    """Pool worker: one exhaustive search on one instance."""
    instance_id, inst, mechanism, c, gir_literal = args
    result = exhaustive_search(mechanism, inst, c, gir_literal=gir_literal)
    return SweepRecord(instance_id=instance_id, instance=inst, result=result, violations=ceiling_violations(result))


class SweepRunner:
    """Exhaustive manipulation searches over a family of instances."""

    def __init__(self, mechanism: Mechanism, c: int, gir_literal: bool = True):
        self.mechanism = Mechanism(mechanism)
        self.c = c
        self.gir_literal = gir_literal

    def run_batch(self, instances: Iterable[Instance], processes: int = 1, verbose: bool = False) -> list[SweepRecord]:
        """Search every instance; results come back in input order."""
        args = [(i, inst, self.mechanism, self.c, self.gir_literal) for i, inst in enumerate(instances)]
        if verbose:
            print(f"🚀 Starting sweep: {len(args)} instances, {self.mechanism.value}, c={self.c}, {processes} process(es)...", file=sys.stderr)
        start_time = time.time()

        # Pool.map keeps input order, so ids line up with the serial run
        if processes > 1:
            with multiprocessing.Pool(processes=processes) as pool:
                records = pool.map(_run_single_search, args)
        else:
            records = [_run_single_search(a) for a in args]

        duration = time.time() - start_time
        logger.info("Sweep of %d instances finished in %.2fs", len(args), duration)
        if verbose:
            print(f"✅ Sweep complete in {duration:.2f}s", file=sys.stderr)
        return records

    @staticmethod
    def to_frame(records: list[SweepRecord]) -> pd.DataFrame:
        """One row per (instance, aggregate, corrupted agent) of the argmax manipulations."""
        rows = []
        # only the argmax manipulations, a full dump of every profile would be huge
        for record in records:
            result = record.result
            for aggregate, report in result.argmax.items():
                for agent, ratio in report.per_agent.items():
                    rows.append({
                        "instance_id": record.instance_id,
                        "mechanism": result.mechanism.value,
                        "c": result.c,
                        "aggregate": aggregate,
                        "coalition": " ".join(str(a) for a in report.coalition.members),
                        "agent": agent,
                        "ratio": format_ratio(ratio),
                        "ratio_float": float(ratio),
                        "empirical": format_ratio(getattr(result, f"empirical_{aggregate}")),
                        "violations": len(record.violations),
                    })
        return pd.DataFrame(rows)

    def save_results(self, records: list[SweepRecord], output_path: str) -> None:
        """Save flattened results to CSV."""
        if not records:
            print("⚠️ No results to save.", file=sys.stderr)
            return
        directory = os.path.dirname(output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.to_frame(records).to_csv(output_path, index=False)
        print(f"💾 Results saved to: {output_path}", file=sys.stderr)

    @staticmethod
    def summarize(records: list[SweepRecord]) -> dict:
        def top(attr: str) -> Optional[str]:
            values = [getattr(r.result, attr) for r in records if getattr(r.result, attr) is not None]
            return format_ratio(max(values)) if values else None

        return {
            "instances": len(records),
            "max_ir": top("empirical_ir"),
            "max_gir": top("empirical_gir"),
            "max_sgir": top("empirical_sgir"),
            "max_unconditional": top("empirical_unconditional_max"),
            "max_first_picker": top("first_picker_max"),
            "infinite_ratio_manipulations": sum(r.result.infinite_ratio_count for r in records),
            "violations": sum(len(r.violations) for r in records),
        }

    def print_summary(self, records: list[SweepRecord], stream=None) -> None:
        if not records:
            return
        summary = self.summarize(records)
        print(f"\n📊 Sweep Summary ({self.mechanism.value}, c={self.c}):", file=stream)
        print(f"   Instances:        {summary['instances']}", file=stream)
        print(f"   Max IR:           {summary['max_ir']}", file=stream)
        print(f"   Max GIR:          {summary['max_gir']}", file=stream)
        print(f"   Max SGIR:         {summary['max_sgir']}", file=stream)
        print(f"   Infinite ratios:  {summary['infinite_ratio_manipulations']} manipulation(s)", file=stream)
        if summary["violations"]:
            print(f"   ❌ {summary['violations']} ceiling violation(s)", file=stream)
        else:
            print("   ✅ All ceilings hold", file=stream)
