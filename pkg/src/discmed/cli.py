"""Command line: solve / gen / verify / stochastic with JSON reports.

Exit status: 0 on success with every certificate holding, 2 when a
certificate fails (the report is still written), 1 on input errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .instance import (
    Cardinality,
    Instance,
    InstanceError,
    Knapsack,
    Matroid,
    dump,
    from_json,
    generate,
    normalize,
    validate,
)
from .iterround import IntegralityError, RoundingError, solve_kmeddis, solve_matmeddis
from .knapsack import SparsifyGuard, solve_knapmeddis, theoretical_caps
from .oracle import GuardExceeded, check_bicriteria
from .stochastic import (
    EXACT_OUTCOME_GUARD,
    eval_expected_max,
    realization_space_size,
    solve_stochastic_center,
    stochastic_from_json,
)

DEFAULT_TAU = {"cardinality": 1.91, "matroid": 2.36, "knapsack": 1.9}


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InstanceError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InstanceError(f"malformed JSON in {path}: {exc}") from exc


def _load_instance(path: str) -> Instance:
    inst = from_json(_load_json(path))
    problems = validate(normalize(inst))  # scale is repairable, so check after
    if problems:
        raise InstanceError("invalid instance: " + "; ".join(problems))
    return inst


def _emit(blob: dict, out: str | None) -> None:
    text = json.dumps(blob, indent=1, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    con = inst.constraint
    if isinstance(con, Cardinality):
        tau = args.tau if args.tau is not None else DEFAULT_TAU["cardinality"]
        rep = solve_kmeddis(inst, tau=tau, h=args.step or 2)
    elif isinstance(con, Matroid):
        tau = args.tau if args.tau is not None else DEFAULT_TAU["matroid"]
        rep = solve_matmeddis(inst, tau=tau)
    elif isinstance(con, Knapsack):
        tau = args.tau if args.tau is not None else DEFAULT_TAU["knapsack"]
        caps = None
        if args.cap1 is not None or args.cap2 is not None:
            theo = theoretical_caps(args.rho, args.delta)
            caps = (
                args.cap1 if args.cap1 is not None else theo[0],
                args.cap2 if args.cap2 is not None else theo[1],
            )
        rep = solve_knapmeddis(
            inst,
            tau=tau,
            rho=args.rho,
            delta=args.delta,
            epsilon=args.epsilon,
            caps=caps,
            max_candidates=args.max_candidates,
            jobs=args.jobs,
        )
    else:
        raise InstanceError("unsupported constraint family")

    blob = rep.to_json()
    blob["version"] = __version__
    blob["config"] = {
        "command": "solve",
        "instance": args.instance,
        "tau": tau,
        "step": args.step,
        "rho": args.rho,
        "delta": args.delta,
        "epsilon": args.epsilon,
        "cap1": args.cap1,
        "cap2": args.cap2,
        "maxCandidates": args.max_candidates,
        "jobs": args.jobs,
        "seed": args.seed,
    }
    if args.oracle:
        cert = check_bicriteria(inst, rep.solution, rep.alpha, rep.beta)
        blob["oracle"] = cert
        blob["certificates"].append(
            {
                "name": "bicriteria_vs_bruteforce",
                "lhs": cert["lhs"],
                "rhs": cert["rhs"],
                "holds": cert["holds"],
            }
        )
    _emit(blob, args.out)
    return 0 if all(c["holds"] for c in blob["certificates"]) else 2


def _cmd_gen(args) -> int:
    inst = generate(
        args.facilities,
        args.clients,
        kind=args.kind,
        discount_scale=args.discount_scale,
        seed=args.seed,
    )
    if args.out:
        dump(inst, args.out)
    else:
        from .instance import to_json

        print(json.dumps(to_json(inst), indent=1, sort_keys=True))
    return 0


def _cmd_verify(args) -> int:
    inst = _load_instance(args.instance)
    report = _load_json(args.report)
    try:
        solution = list(report["solution"])
        alpha = float(report["alpha"])
        beta = float(report["beta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"malformed report: {exc}") from exc
    cert = check_bicriteria(inst, solution, alpha, beta)
    _emit(cert, args.out)
    return 0 if cert["holds"] else 2


def _cmd_stochastic(args) -> int:
    stoch = stochastic_from_json(_load_json(args.instance))
    con = stoch.base.constraint
    if isinstance(con, Knapsack):
        tau = args.tau if args.tau is not None else DEFAULT_TAU["knapsack"]
    elif isinstance(con, Matroid):
        tau = args.tau if args.tau is not None else DEFAULT_TAU["matroid"]
    else:
        tau = args.tau if args.tau is not None else DEFAULT_TAU["cardinality"]
    knap_options = None
    if isinstance(con, Knapsack):
        knap_options = {
            "rho": args.rho,
            "delta": args.delta,
            "epsilon": 0.25,
            "max_candidates": args.max_candidates,
            "jobs": args.jobs,
        }
    solution, rep = solve_stochastic_center(
        stoch, tau=tau, epsilon=args.epsilon, knap_options=knap_options
    )
    blob = rep.to_json()
    blob["solution"] = list(solution)
    blob["version"] = __version__
    blob["config"] = {
        "command": "stochastic",
        "instance": args.instance,
        "tau": tau,
        "epsilon": args.epsilon,
        "seed": args.seed,
    }
    if rep.expected_max is None and realization_space_size(stoch) > EXACT_OUTCOME_GUARD:
        blob["expectedMax"] = eval_expected_max(
            stoch, solution, mode=("montecarlo", 100_000, args.seed)
        )
        blob["expectedMaxMode"] = "montecarlo"
    certified = blob["expectedMax"] is None or blob["expectedMax"] <= (
        (rep.alpha + rep.beta) * rep.t_star + 1e-6
    )
    blob["certificates"] = [
        {
            "name": "expected_max_le_alpha_beta_Tstar",
            "lhs": blob["expectedMax"],
            "rhs": (rep.alpha + rep.beta) * rep.t_star,
            "holds": bool(certified),
        }
    ]
    _emit(blob, args.out)
    return 0 if certified else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discmed",
        description="median clustering with per-client discounts: solvers and certifiers",
    )
    parser.add_argument("--version", action="version", version=f"discmed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    solve_p = sub.add_parser("solve", help="solve one instance and emit a certified report")
    solve_p.add_argument("instance")
    solve_p.add_argument("--tau", type=float, default=None)
    solve_p.add_argument("--step", type=int, choices=(1, 2), default=None)
    solve_p.add_argument("--rho", type=float, default=1.0 / 3.0)
    solve_p.add_argument("--delta", type=float, default=2.0 / 3.0)
    solve_p.add_argument("--epsilon", type=float, default=0.1)
    solve_p.add_argument("--cap1", type=int, default=None)
    solve_p.add_argument("--cap2", type=int, default=None)
    solve_p.add_argument("--max-candidates", type=int, default=200_000)
    solve_p.add_argument("--jobs", type=int, default=1)
    solve_p.add_argument("--seed", type=int, default=0)
    solve_p.add_argument("--out", default=None)
    solve_p.add_argument("--oracle", action="store_true")
    solve_p.set_defaults(func=_cmd_solve)

    gen_p = sub.add_parser("gen", help="generate a random instance")
    gen_p.add_argument("--facilities", type=int, required=True)
    gen_p.add_argument("--clients", type=int, required=True)
    gen_p.add_argument(
        "--kind",
        choices=("cardinality", "uniform", "partition", "explicit", "knapsack"),
        default="cardinality",
    )
    gen_p.add_argument("--discount-scale", type=float, default=0.5)
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--out", default=None)
    gen_p.set_defaults(func=_cmd_gen)

    verify_p = sub.add_parser("verify", help="check a report against the brute-force oracle")
    verify_p.add_argument("instance")
    verify_p.add_argument("report")
    verify_p.add_argument("--out", default=None)
    verify_p.set_defaults(func=_cmd_verify)

    sto_p = sub.add_parser("stochastic", help="stochastic center via the discount sweep")
    sto_p.add_argument("instance")
    sto_p.add_argument("--tau", type=float, default=None)
    sto_p.add_argument("--epsilon", type=float, default=0.1)
    sto_p.add_argument("--rho", type=float, default=1.0 / 3.0)
    sto_p.add_argument("--delta", type=float, default=2.0 / 3.0)
    sto_p.add_argument("--max-candidates", type=int, default=200_000)
    sto_p.add_argument("--jobs", type=int, default=1)
    sto_p.add_argument("--seed", type=int, default=0)
    sto_p.add_argument("--out", default=None)
    sto_p.set_defaults(func=_cmd_stochastic)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, SparsifyGuard, GuardExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegralityError, RoundingError) as exc:
        print(f"rounding failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
