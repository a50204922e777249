"""Stochastic center clustering through a uniform-discount sweep.

Independent stochastic points realize at client locations; the objective is
the expected maximum distance from a realized point to the chosen facilities.
The solver repeatedly runs the matching discount solver with a uniform
discount T (clients weighted by their realization probability), geometrically
decreasing T, and returns the output at the smallest T that still meets the
beta*T acceptance test, with T = 0 as the final fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .instance import (
    Cardinality,
    Instance,
    InstanceError,
    Knapsack,
    Matroid,
    discounted_cost,
    generate,
    normalize,
    validate,
)
from .iterround import bicriteria_factors, solve_kmeddis, solve_matmeddis
from .knapsack import knapsack_alpha, knapsack_est_coefficient, solve_knapmeddis

EXACT_OUTCOME_GUARD = 1_000_000


@dataclass(frozen=True)
class StochasticPoint:
    pid: str
    dist: dict[str, float]  # client location -> realization probability

    def none_probability(self) -> float:
        return max(0.0, 1.0 - sum(self.dist.values()))


@dataclass(frozen=True, eq=False)
class StochasticInstance:
    base: Instance  # discounts must all be zero
    points: tuple[StochasticPoint, ...]


def validate_stochastic(stoch: StochasticInstance) -> list[str]:
    out = validate(stoch.base)
    if any(v != 0.0 for v in stoch.base.discounts.values()):
        out.append("base instance of a stochastic problem must have zero discounts")
    clients = set(stoch.base.clients)
    for pt in stoch.points:
        total = 0.0
        for loc, q in pt.dist.items():
            if loc not in clients:
                out.append(f"point {pt.pid} realizes at unknown location {loc}")
            if not 0.0 <= q <= 1.0:
                out.append(f"point {pt.pid} has probability {q} outside [0, 1]")
            total += q
        if total > 1.0 + 1e-9:
            out.append(f"point {pt.pid} has total probability {total} > 1")
    return out


def realization_probs(stoch: StochasticInstance) -> dict[str, float]:
    """p_j = chance that at least one point realizes at client j."""
    miss = {j: 1.0 for j in stoch.base.clients}
    for pt in stoch.points:
        for loc, q in pt.dist.items():
            miss[loc] *= 1.0 - q
    return {j: 1.0 - m for j, m in miss.items()}


def realization_space_size(stoch: StochasticInstance) -> int:
    size = 1
    for pt in stoch.points:
        support = sum(1 for q in pt.dist.values() if q > 0)
        size *= support + (1 if pt.none_probability() > 0 else 0)
    return size


def eval_expected_max(stoch: StochasticInstance, chosen, mode="exact") -> float:
    """Expected max distance of realized points to ``chosen``.

    mode is "exact" (full product-space enumeration, guarded) or a tuple
    ("montecarlo", n_samples, seed) for a deterministic empirical mean.
    """
    base = stoch.base
    chosen = sorted(set(chosen))
    if not chosen:
        raise InstanceError("eval_expected_max: empty facility set")
    rows = [base.fac_pos[f] for f in chosen]
    nearest = {j: float(base.dist_fc[rows, base.cli_pos[j]].min()) for j in base.clients}
    if mode == "exact":
        if realization_space_size(stoch) > EXACT_OUTCOME_GUARD:
            raise InstanceError("realization space too large for exact evaluation")
        dist = {0.0: 1.0}  # distribution of the running maximum
        for pt in stoch.points:
            none_p = pt.none_probability()
            nxt: dict[float, float] = {}
            for cur, prob in dist.items():
                if none_p > 0:
                    nxt[cur] = nxt.get(cur, 0.0) + prob * none_p
                for loc, q in sorted(pt.dist.items()):
                    if q > 0:
                        m = max(cur, nearest[loc])
                        nxt[m] = nxt.get(m, 0.0) + prob * q
            dist = nxt
        return float(sum(m * p for m, p in dist.items()))
    kind, n_samples, seed = mode
    if kind != "montecarlo":
        raise InstanceError(f"unknown evaluation mode {mode!r}")
    rng = np.random.default_rng(seed)
    best = np.zeros(n_samples)
    for pt in stoch.points:
        locs = sorted(pt.dist)
        probs = np.array([pt.dist[loc] for loc in locs] + [pt.none_probability()])
        probs = probs / probs.sum()
        vals = np.array([nearest[loc] for loc in locs] + [0.0])
        draw = rng.choice(len(probs), size=n_samples, p=probs)
        best = np.maximum(best, vals[draw])
    return float(best.mean())


@dataclass
class SweepStep:
    T: float
    solution: tuple[str, ...]
    cost: float  # weighted discounted cost against alpha*T
    passed: bool


@dataclass
class StochasticReport:
    t_star: float
    alpha: float
    beta: float
    guarantee_constant: float
    flagged: bool
    sweep: list[SweepStep]
    expected_max: float | None

    def to_json(self) -> dict:
        return {
            "Tstar": self.t_star,
            "alpha": self.alpha,
            "beta": self.beta,
            "guaranteeConstant": self.guarantee_constant,
            "flagged": self.flagged,
            "expectedMax": self.expected_max,
            "sweep": [
                {"T": s.T, "solution": list(s.solution), "cost": s.cost, "passed": s.passed}
                for s in self.sweep
            ],
        }


def _core_solver(constraint, tau, knap_options):
    if isinstance(constraint, Cardinality):
        alpha, beta = bicriteria_factors(tau, 2)
        return (lambda inst: solve_kmeddis(inst, tau=tau).solution), alpha, beta
    if isinstance(constraint, Matroid):
        alpha, beta = bicriteria_factors(tau, 1)
        return (lambda inst: solve_matmeddis(inst, tau=tau).solution), alpha, beta
    if isinstance(constraint, Knapsack):
        opts = dict(rho=1.0 / 3.0, delta=2.0 / 3.0, epsilon=0.25)
        opts.update(knap_options or {})
        alpha = knapsack_alpha(tau, opts["delta"])
        beta = knapsack_est_coefficient(tau, opts["rho"], opts["delta"]) * (
            1.0 + opts["epsilon"]
        )
        return (lambda inst: solve_knapmeddis(inst, tau=tau, **opts).solution), alpha, beta
    raise InstanceError(f"unknown constraint family {type(constraint).__name__}")


def solve_stochastic_center(
    stoch: StochasticInstance,
    tau: float,
    epsilon: float,
    knap_options: dict | None = None,
) -> tuple[tuple[str, ...], StochasticReport]:
    """Discount sweep; returns the chosen set and a certified report.

    The sweep starts at the metric diameter and scales by (1 - epsilon) while
    T >= 1 (the normalized minimum distance), with a final T = 0 fallback.
    The returned set is the output at the smallest T passing the beta*T test,
    and E[max] <= (alpha + beta) * T_star is evaluated exactly when feasible.
    """
    if not 0.0 < epsilon < 1.0:
        raise InstanceError("epsilon must lie in (0, 1)")
    base = normalize(stoch.base)
    problems = validate_stochastic(StochasticInstance(base, stoch.points))
    if problems:
        raise InstanceError("invalid stochastic instance: " + "; ".join(problems))

    probs = realization_probs(stoch)
    weighted = replace(base, client_weights=dict(probs))
    solve_one, alpha, beta = _core_solver(base.constraint, tau, knap_options)

    diameter = float(base.metric.dist.max())
    ts: list[float] = []
    t = diameter
    while t >= 1.0:
        ts.append(t)
        t *= 1.0 - epsilon
    ts.append(0.0)

    sweep: list[SweepStep] = []
    best: SweepStep | None = None
    flagged = False
    for T in ts:
        inst_t = replace(weighted, discounts={j: T for j in base.clients})
        solution = solve_one(inst_t)
        cost = discounted_cost(inst_t, solution, alpha if T > 0 else 1.0)
        passed = cost <= beta * T + 1e-9
        sweep.append(SweepStep(T=T, solution=solution, cost=cost, passed=passed))
        if passed:
            best = sweep[-1]
        else:
            if T == 0.0:
                flagged = True  # criterion held down to the unit floor only
            break
    if best is None:
        raise InstanceError("the sweep acceptance test failed at the diameter")

    expected = None
    if realization_space_size(stoch) <= EXACT_OUTCOME_GUARD:
        expected = eval_expected_max(stoch, best.solution, mode="exact")
    report = StochasticReport(
        t_star=best.T,
        alpha=alpha,
        beta=beta,
        guarantee_constant=3.0 * (1.0 + 2.0 * epsilon) * (alpha + beta),
        flagged=flagged,
        sweep=sweep,
        expected_max=expected,
    )
    return best.solution, report


def generate_stochastic(
    n_facilities: int,
    n_points: int,
    kind: str = "uniform",
    seed: int = 0,
    prob_floor: float = 0.4,
    n_clients: int | None = None,
) -> StochasticInstance:
    """Random stochastic instance over a generated zero-discount base.

    Per-location probabilities are at least ``prob_floor`` so any instance
    with a nonzero optimum has optimum at least that floor; the sweep's unit
    stopping threshold then cannot void the certified constant.
    """
    rng = np.random.default_rng(seed)
    if n_clients is None:
        n_clients = max(2, n_points + int(rng.integers(0, 3)))
    n_clients = max(2, n_clients)
    base = generate(n_facilities, n_clients, kind=kind, discount_scale=0.0, seed=seed + 1)
    points = []
    for v in range(n_points):
        support = int(rng.integers(1, 3))
        locs = [str(x) for x in rng.choice(base.clients, size=support, replace=False)]
        if support == 1:
            qs = [float(rng.uniform(prob_floor, 1.0))]
        else:
            q1 = float(rng.uniform(prob_floor, 1.0 - prob_floor))
            qs = [q1, float(rng.uniform(prob_floor, 1.0 - q1))]
        points.append(StochasticPoint(f"v{v:02d}", dict(zip(locs, qs))))
    return StochasticInstance(base=base, points=tuple(points))


# ---------------------------------------------------------------------------
# JSON schema


def stochastic_to_json(stoch: StochasticInstance) -> dict:
    from .instance import to_json

    blob = to_json(stoch.base)
    blob["points"] = [{"id": pt.pid, "dist": dict(pt.dist)} for pt in stoch.points]
    return blob


def stochastic_from_json(obj: dict) -> StochasticInstance:
    from .instance import from_json

    base_blob = {k: v for k, v in obj.items() if k != "points"}
    base = from_json(base_blob)
    try:
        points = tuple(
            StochasticPoint(p["id"], {str(k): float(v) for k, v in p["dist"].items()})
            for p in obj["points"]
        )
    except (KeyError, TypeError) as exc:
        raise InstanceError(f"malformed stochastic JSON: {exc}") from exc
    return StochasticInstance(base=base, points=points)
