"""
collusion-lab command line.

    collusion-lab run --mechanism ps --input data/symmetric_2x2.json
    collusion-lab check-equivalence --n 3 --m 3
    collusion-lab search --mechanism rr --c 2 --sweep binary --n 3 --m 3
    collusion-lab reproduce rr-sgir --eps 1/100
    collusion-lab gen ps-gir --n 2 --c 1 --T 2

Exit codes: 0 pass, 1 property violation, 2 input error, 3 solver failure.
"""

import argparse
import io
import json
import logging
import math
import sys
from itertools import permutations, product
from typing import Optional

import pandas as pd
from pydantic import BaseModel, ValidationError, model_validator

from .core.errors import CollusionLabError, NoConvergenceError, SearchTooLargeError
from .core.fisher import DEFAULT_MAX_ITER, DEFAULT_TOL, ZeroGoodKind, ZeroGoodPolicy, mnw_from_outcome, proportional_response_solve
from .core.mechanisms import couple_ps_with_rr, coupling_violations, probabilistic_serial, round_robin, trace_violations
from .core.models import FrozenModel, Instance, OrdinalProfile
from .core.rational import parse_rational
from .core.serialization import dump_data, dump_model, parse_json, read_json, write_text
from .core.valuations import ordinal_from_cardinal, validate_instance
from .settings import Settings
from .simulation.batch_runner import SweepRunner, ceiling_violations, mnw_probe_violations
from .simulation.incentives import Mechanism, exhaustive_search, mnw_manipulation_ratio, mnw_random_probes
from .simulation.instances import (
    PaperInstance,
    ValuationFamily,
    all_binary_instances,
    random_instance,
)
from .simulation.verify_bounds import BoundId, build_instance, print_reproduction, reproduce

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3

EQUIVALENCE_LIMIT = 10**6

RUN_MECHANISMS = ("rr", "ps", "ps-via-rr", "mnw")
SEARCH_MECHANISMS = ("rr", "ps", "mnw")


class RunConfig(FrozenModel):
    """Parsed and cross-checked command-line options."""

    subcommand: str
    input: Optional[str] = None
    instance: Optional[str] = None
    mechanism: Optional[str] = None
    c: Optional[int] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: Optional[int] = None
    output_format: str = "json"
    output: Optional[str] = None
    T: Optional[int] = None
    paper_T: bool = False
    no_trace: bool = False
    gir_literal: bool = True

    @model_validator(mode="after")
    def check_flags(self) -> "RunConfig":
        if self.paper_T and self.mechanism != "ps-via-rr":
            raise ValueError("--paper-T is only valid with --mechanism ps-via-rr")
        if self.T is not None and self.mechanism != "ps-via-rr":
            raise ValueError("--T is only valid with --mechanism ps-via-rr")
        if self.T is not None and self.paper_T:
            raise ValueError("--T and --paper-T are mutually exclusive")
        if self.c is not None and self.c < 1:
            raise ValueError(f"--c must be at least 1, got {self.c}")
        if self.tol <= 0:
            raise ValueError(f"--tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"--max-iter must be positive, got {self.max_iter}")
        if self.input is not None and self.instance is not None:
            raise ValueError("--input and --instance are mutually exclusive")
        if self.output_format not in ("json", "csv"):
            raise ValueError(f"Unknown format {self.output_format!r}")
        return self

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        return cls(
            subcommand=args.command,
            input=getattr(args, "input", None),
            instance=getattr(args, "instance", None),
            mechanism=getattr(args, "mechanism", None),
            c=getattr(args, "c", None),
            tol=getattr(args, "tol", DEFAULT_TOL),
            max_iter=getattr(args, "max_iter", DEFAULT_MAX_ITER),
            seed=getattr(args, "seed", None),
            output_format=args.format,
            output=args.output,
            T=getattr(args, "T", None) if args.command == "run" else None,
            paper_T=getattr(args, "paper_T", False),
            no_trace=getattr(args, "no_trace", False),
            gir_literal=getattr(args, "gir_literal", True),
        )


# --- input / output helpers ---

def _load_input(config: RunConfig) -> tuple[Instance, Optional[PaperInstance]]:
    """Instance JSON, or a generator bundle (recognized by its "instance" key)."""
    if config.input is not None:
        data = read_json(config.input)
    elif config.instance is not None:
        data = parse_json(config.instance)
    else:
        raise ValueError("Give an instance with --input PATH or --instance JSON")
    if isinstance(data, dict) and "instance" in data:
        bundle = PaperInstance.model_validate(data)
        return bundle.instance, bundle
    return Instance.model_validate(data), None


def _truthful_profile(inst: Instance, bundle: Optional[PaperInstance]) -> OrdinalProfile:
    return bundle.truthful if bundle is not None else ordinal_from_cardinal(inst)


def _emit(config: RunConfig, data, frame: Optional[pd.DataFrame] = None) -> None:
    if config.output_format == "csv" and frame is not None:
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False)
        write_text(buffer.getvalue(), config.output)
    elif isinstance(data, BaseModel):
        write_text(dump_model(data), config.output)
    else:
        write_text(dump_data(data), config.output)


def _share_frame(shares) -> pd.DataFrame:
    return pd.DataFrame(
        [{"agent": a, "good": g, "share": str(x)} for a, row in enumerate(shares) for g, x in enumerate(row)]
    )


def _zero_good_policy(spec: str) -> ZeroGoodPolicy:
    if spec == "uniform":
        return ZeroGoodPolicy()
    if spec.startswith("agent:"):
        return ZeroGoodPolicy(kind=ZeroGoodKind.TO_AGENT, agent=int(spec.split(":", 1)[1]))
    raise ValueError(f"Unknown zero-good policy {spec!r} (use uniform or agent:<a>)")


# --- subcommands ---

def cmd_run(config: RunConfig, args: argparse.Namespace) -> int:
    inst, bundle = _load_input(config)
    mechanism = config.mechanism
    validate_instance(inst, for_fisher=mechanism == "mnw")
    result: dict = {"mechanism": mechanism}

    if mechanism == "mnw":
        policy = _zero_good_policy(args.zero_goods)
        outcome = proportional_response_solve(inst, tol=config.tol, max_iter=config.max_iter)
        allocation = mnw_from_outcome(inst, outcome, policy)
        result["allocation"] = allocation.model_dump(mode="json")
        if not config.no_trace:
            result["outcome"] = outcome.model_dump(mode="json")
        shares = allocation.shares
    else:
        profile = _truthful_profile(inst, bundle)
        if mechanism == "rr":
            allocation, trace = round_robin(profile)
            shares = allocation.matrix()
        elif mechanism == "ps":
            allocation, trace = probabilistic_serial(profile)
            shares = allocation.shares
        else:
            coupling = couple_ps_with_rr(profile, T=config.T, paper_T=config.paper_T)
            allocation, trace = coupling.allocation, coupling.ps_trace
            result["T"] = coupling.T
            shares = allocation.shares
        result["allocation"] = allocation.model_dump(mode="json")
        if not config.no_trace:
            result["trace"] = trace.model_dump(mode="json")

    _emit(config, result, _share_frame(shares))
    return EXIT_OK


def cmd_check_equivalence(config: RunConfig, args: argparse.Namespace) -> int:
    n, m = args.n, args.m
    if n < 1 or m < 1:
        raise ValueError(f"Need n, m >= 1, got n={n}, m={m}")
    count = math.factorial(m) ** n
    if count > EQUIVALENCE_LIMIT:
        raise SearchTooLargeError(count, EQUIVALENCE_LIMIT, "profiles")

    print(f"🧪 Comparing PS with PS-via-RR on {count} profiles (n={n}, m={m})...", file=sys.stderr)
    counterexample = None
    checked = 0
    problems: list[str] = []
    for orderings in product(permutations(range(m)), repeat=n):
        profile = OrdinalProfile(orderings=orderings)
        direct, trace = probabilistic_serial(profile)
        coupling = couple_ps_with_rr(profile)
        checked += 1
        found = trace_violations(trace, direct) + coupling_violations(coupling)
        problems.extend(found)
        if coupling.allocation != direct or found:
            counterexample = {
                "orderings": [list(o) for o in orderings],
                "ps": direct.model_dump(mode="json"),
                "ps_via_rr": coupling.allocation.model_dump(mode="json"),
                "T": coupling.T,
                "violations": found,
            }
            break

    passed = counterexample is None
    report = {"n": n, "m": m, "profiles": checked, "passed": passed, "counterexample": counterexample}
    print(f"   {'✅ passed' if passed else '❌ failed'} after {checked} profile(s)", file=sys.stderr)
    frame = pd.DataFrame([{"n": n, "m": m, "profiles": checked, "passed": passed}])
    _emit(config, report, frame)
    return EXIT_OK if passed else EXIT_VIOLATION


def _sweep_instances(args: argparse.Namespace) -> list[Instance]:
    if args.sweep == "binary":
        return list(all_binary_instances(args.n, args.m))
    seed = args.seed if args.seed is not None else 0
    return [
        random_instance(args.n, args.m, ValuationFamily(args.family), seed=seed + i)
        for i in range(args.random)
    ]


def _search_mnw(config: RunConfig, args: argparse.Namespace) -> int:
    inst, bundle = _load_input(config)
    validate_instance(inst, for_fisher=True)
    reports = []
    if bundle is not None and bundle.coalition.cardinal is not None:
        reports.append(mnw_manipulation_ratio(
            inst, bundle.coalition, bundle.truthful_policy, bundle.manipulated_policy,
            tol=config.tol, max_iter=config.max_iter,
        ))
    if args.probes:
        if config.seed is None:
            raise ValueError("--probes needs an explicit --seed")
        members = range(min(config.c, inst.n))
        reports.extend(mnw_random_probes(inst, members, args.probes, config.seed, tol=config.tol, max_iter=config.max_iter))
    violations = mnw_probe_violations(reports, config.c)
    for v in violations:
        print(f"❌ {v}", file=sys.stderr)
    data = {
        "mechanism": "MNW",
        "c": config.c,
        "reports": [r.model_dump(mode="json") for r in reports],
        "violations": violations,
    }
    frame = pd.DataFrame([
        {"probe": i, "agent": a, "ratio": str(ratio), "all_weakly_better": r.all_weakly_better}
        for i, r in enumerate(reports) for a, ratio in r.per_agent.items()
    ])
    _emit(config, data, frame)
    return EXIT_VIOLATION if violations else EXIT_OK


def cmd_search(config: RunConfig, args: argparse.Namespace) -> int:
    if config.mechanism == "mnw":
        return _search_mnw(config, args)
    settings = Settings.from_env()

    mechanism = Mechanism(config.mechanism.upper())
    runner = SweepRunner(mechanism, config.c, gir_literal=config.gir_literal)

    if args.sweep is None and args.random is None:
        inst, bundle = _load_input(config)
        validate_instance(inst)
        result = exhaustive_search(
            mechanism, inst, config.c,
            truthful=_truthful_profile(inst, bundle) if bundle else None,
            gir_literal=config.gir_literal,
            processes=settings.threads,
            progress=args.verbose,
        )
        violations = ceiling_violations(result)
        for v in violations:
            print(f"❌ {v}", file=sys.stderr)
        frame = pd.DataFrame([
            {"aggregate": key, "coalition": " ".join(map(str, rep.coalition.members)), "agent": a, "ratio": str(r)}
            for key, rep in result.argmax.items() for a, r in rep.per_agent.items()
        ])
        _emit(config, result, frame)
        return EXIT_VIOLATION if violations else EXIT_OK

    if args.n is None or args.m is None:
        raise ValueError("Sweeps need --n and --m")
    if args.random is not None and config.seed is None:
        raise ValueError("Random sweeps need an explicit --seed")
    instances = _sweep_instances(args)
    records = runner.run_batch(instances, processes=settings.threads, verbose=True)
    runner.print_summary(records, stream=sys.stderr)
    data = {
        "mechanism": mechanism.value,
        "c": config.c,
        "summary": runner.summarize(records),
        "results": [
            {"instance_id": r.instance_id, "instance": r.instance.model_dump(mode="json"),
             "result": r.result.model_dump(mode="json"), "violations": r.violations}
            for r in records
        ],
    }
    _emit(config, data, runner.to_frame(records))
    return EXIT_VIOLATION if any(r.violations for r in records) else EXIT_OK


def cmd_reproduce(config: RunConfig, args: argparse.Namespace) -> int:
    params = {"n": args.n, "c": args.c, "T": args.T, "eps": parse_rational(args.eps) if args.eps else None}
    result = reproduce(BoundId(args.bound), tol=config.tol, **params)
    print_reproduction(result, stream=sys.stderr)
    frame = pd.DataFrame([
        {"bound": result.bound_id.value, "agent": a, "achieved": str(result.achieved[a]),
         "expected": str(result.expected[a]), "limit": str(result.limit), "matches": result.matches}
        for a in sorted(result.expected)
    ])
    _emit(config, result, frame)
    return EXIT_OK if result.matches else EXIT_VIOLATION


def cmd_gen(config: RunConfig, args: argparse.Namespace) -> int:
    if args.kind == "random":
        if args.n is None or args.m is None or config.seed is None:
            raise ValueError("gen random needs --n, --m and --seed")
        inst = random_instance(args.n, args.m, ValuationFamily(args.family), seed=config.seed,
                               positive_rows=args.positive_rows)
        _emit(config, inst, _share_frame(inst.valuations))
        return EXIT_OK
    params = {"n": args.n, "c": args.c, "T": args.T, "eps": parse_rational(args.eps) if args.eps else None}
    bundle = build_instance(BoundId(args.kind), **params)
    _emit(config, bundle, _share_frame(bundle.instance.valuations))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "check-equivalence": cmd_check_equivalence,
    "search": cmd_search,
    "reproduce": cmd_reproduce,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["json", "csv"], default="json", help="Output format")
    common.add_argument("--output", type=str, default=None, help="Write output to this path instead of stdout")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging and progress bars on stderr")

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--input", type=str, default=None, help="Instance or generator bundle JSON file")
    source.add_argument("--instance", type=str, default=None, help="Inline instance JSON")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--tol", type=float, default=DEFAULT_TOL, help="Solver tolerance (relative price change)")
    solver.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER, help="Solver iteration cap")

    params = argparse.ArgumentParser(add_help=False)
    params.add_argument("--n", type=int, default=None, help="Number of agents")
    params.add_argument("--c", type=int, default=None, help="Coalition size bound")
    params.add_argument("--T", type=int, default=None, help="Copies parameter of the PS construction")
    params.add_argument("--eps", type=str, default=None, help="Epsilon of the RR construction, e.g. 1/100")

    parser = argparse.ArgumentParser(prog="collusion-lab", description="Coalition manipulation of RR, PS and MNW")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common, source, solver], help="Run a mechanism on an instance")
    run.add_argument("--mechanism", choices=RUN_MECHANISMS, required=True)
    run.add_argument("--T", type=int, default=None, help="Copies per good for ps-via-rr (default: minimal)")
    run.add_argument("--paper-T", action="store_true", help="Use (n!)^m copies per good for ps-via-rr")
    run.add_argument("--no-trace", action="store_true", help="Leave the execution trace out of the output")
    run.add_argument("--zero-goods", type=str, default="uniform", help="MNW policy for unvalued goods: uniform | agent:<a>")

    eq = sub.add_parser("check-equivalence", parents=[common], help="Compare PS with PS-via-RR on all profiles")
    eq.add_argument("--n", type=int, required=True)
    eq.add_argument("--m", type=int, required=True)

    search = sub.add_parser("search", parents=[common, source, solver], help="Coalition manipulation search")
    search.add_argument("--mechanism", choices=SEARCH_MECHANISMS, required=True)
    search.add_argument("--c", type=int, required=True)
    search.add_argument("--sweep", choices=["binary"], default=None, help="Search every binary instance of shape n x m")
    search.add_argument("--random", type=int, default=None, help="Search this many seeded random instances")
    search.add_argument("--n", type=int, default=None)
    search.add_argument("--m", type=int, default=None)
    search.add_argument("--seed", type=int, default=None)
    search.add_argument("--family", choices=[f.value for f in ValuationFamily], default=ValuationFamily.BINARY.value)
    search.add_argument("--gir-literal", action=argparse.BooleanOptionalAction, default=True,
                        help="GIR over all manipulations (default) or only weakly improving ones")
    search.add_argument("--probes", type=int, default=0, help="Random 0/1 misreports to try for MNW")

    repro = sub.add_parser("reproduce", parents=[common, params], help="Reproduce a lower-bound construction")
    repro.add_argument("bound", choices=[b.value for b in BoundId])
    repro.add_argument("--tol", type=float, default=DEFAULT_TOL)

    gen = sub.add_parser("gen", parents=[common, params], help="Emit a generated instance as JSON")
    gen.add_argument("kind", choices=[b.value for b in BoundId] + ["random"])
    gen.add_argument("--m", type=int, default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--family", choices=[f.value for f in ValuationFamily], default=ValuationFamily.BINARY.value)
    gen.add_argument("--positive-rows", action="store_true")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = RunConfig.from_args(args)
        return COMMANDS[args.command](config, args)
    except NoConvergenceError as e:
        print(f"❌ Solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValidationError, json.JSONDecodeError, OSError, CollusionLabError, ValueError) as e:
        print(f"❌ Input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
