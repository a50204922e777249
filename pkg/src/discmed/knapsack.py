"""Knapsack-constrained pipeline: estimate enumeration, sparsification,
strengthened relaxation, star-balanced duplication, rounding with virtual
clients, and selection among candidate solutions.

The naive knapsack relaxation has an unbounded integrality gap, so the solver
enumerates extended instances (a pre-selected facility set plus a pruned
client set) together with a geometric grid of objective estimates, solves a
strengthened LP on each, rounds with step size 1, and finally resolves the at
most two fractional coordinates a vertex can carry.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discretize import DiscretizedMetric, choose_offset
from .fractional import duplicate_star_balanced, solve_natural, star_costs
from .instance import Instance, InstanceError, Knapsack, discounted_cost, normalize, validate
from .iterround import (
    Certificate,
    RoundingError,
    SolveReport,
    VirtualClient,
    fractional_copies,
    iter_round,
    offset_support,
)
from .lpcore import InfeasibleLP

DEFAULT_MAX_CANDIDATES = 200_000


class SparsifyGuard(RuntimeError):
    """Raised when the extended-instance enumeration would be too large."""


@dataclass
class ExtendedInstance:
    """Knapsack sub-instance with pre-selected facilities and pruned clients."""

    base: Instance
    f0: tuple[str, ...]
    cprime: tuple[str, ...]
    rho: float
    delta: float
    est: float
    c0: float
    # radius caps depend on (cprime, rho, delta, est) but not on f0, so the
    # cache can be shared across extended instances that differ only in f0
    _rj: dict[str, float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.f0 = tuple(sorted(self.f0))
        self.cprime = tuple(sorted(self.cprime))

    def radius_cap(self, client: str) -> float:
        if client not in self._rj:
            self._rj[client] = compute_Rj(self, client)
        return self._rj[client]

    def key(self) -> tuple:
        return (self.f0, self.cprime, self.est)


def knapsack_sigma(tau: float) -> float:
    return tau * (3.0 * tau - 1.0) / (tau - 1.0)


def knapsack_alpha(tau: float, delta: float = 2.0 / 3.0) -> float:
    """Discount multiplier of the knapsack guarantee (3*sigma + 2 at delta=2/3)."""
    sigma = knapsack_sigma(tau)
    return max(
        sigma,
        2.0 * sigma / delta + 2.0,
        (sigma + delta) / (1.0 - delta),
        (1.0 + delta) / (1.0 - delta),
    )


def knapsack_est_coefficient(tau: float, rho: float, delta: float = 2.0 / 3.0) -> float:
    """Coefficient of EST in the certified objective bound."""
    sigma = knapsack_sigma(tau)
    reroute = 4.0 * sigma / delta + 4.0 + sigma + delta
    return max((1.0 + delta) / (1.0 - delta), (3.0 * tau - 1.0) / math.log(tau)) + rho * reroute


def theoretical_caps(rho: float, delta: float) -> tuple[int, int]:
    return math.ceil(1.0 / rho), math.ceil(1.0 / (rho * (1.0 - delta)))


def enumerate_estimates(inst: Instance, epsilon: float) -> list[tuple[float, float]]:
    """All (c0, EST) pairs: per-pair contributions crossed with a (1+eps) grid."""
    if epsilon <= 0:
        raise InstanceError("epsilon must be positive")
    contrib = np.maximum(inst.dist_fc - inst.r[None, :], 0.0) * inst.w[None, :]
    values = sorted({float(v) for v in contrib.ravel() if v > 0})
    pairs: list[tuple[float, float]] = [(0.0, 0.0)]
    n = max(1, len(inst.clients))
    steps = math.ceil(math.log(n) / math.log(1.0 + epsilon)) if n > 1 else 0
    for c0 in values:
        for s in range(steps + 1):
            pairs.append((c0, c0 * (1.0 + epsilon) ** s))
    return pairs


def compute_Rj(ext: ExtendedInstance, client: str) -> float:
    """Largest radius whose pruning ball stays within the per-ball budget.

    The budget function R -> sum over close-by clients of weight * (R -
    discount/(1-delta))^+ is piecewise linear and nondecreasing with
    breakpoints at distance/delta and discount/(1-delta); the largest radius
    with value at most rho*EST is found on the critical segment. When a jump
    lands exactly on the budget the supremum is open and the largest float
    below it is returned, which keeps the budget property intact.
    """
    inst = ext.base
    cj = inst.cli_pos[client]
    cols = [inst.cli_pos[j] for j in ext.cprime]
    dists = inst.dist_cc[cj, cols]
    kinks = inst.r[cols] / (1.0 - ext.delta)
    weights = inst.w[cols]
    budget = ext.rho * ext.est

    def g(R: float) -> float:
        active = dists <= ext.delta * R
        return float(np.sum(weights[active] * np.maximum(R - kinks[active], 0.0)))

    cap = float(inst.metric.dist.max()) / ext.delta + ext.rho * ext.est + 1.0
    if g(cap) <= budget + 1e-12:
        return cap  # budget never binds at any relevant radius

    points = sorted({0.0} | {float(v) for v in dists / ext.delta} | {float(v) for v in kinks})
    points = [p for p in points if 0.0 <= p <= cap] + [cap]
    prev = 0.0
    g_prev = g(0.0)
    for p in points:
        if p <= prev:
            continue
        g_p = g(p)
        if g_p > budget + 1e-15:
            active = (dists <= ext.delta * prev) & (kinks <= prev + 1e-15)
            slope = float(weights[active].sum())
            if slope > 1e-15:
                r_star = prev + (budget - g_prev) / slope
                if r_star < p - 1e-15:
                    return max(0.0, r_star)
            return math.nextafter(p, -math.inf)  # jump exactly at the boundary
        prev, g_prev = p, g_p
    return cap


def _removal_ball_sets(inst: Instance, delta: float) -> list[frozenset[str]]:
    """Distinct client sets removable by one closed ball (center, radius)."""
    sites = list(inst.facilities) + list(inst.clients)
    d_site_cli = inst.metric.submatrix(sites, inst.clients)
    d_site_fac = inst.metric.submatrix(sites, inst.facilities)
    out: set[frozenset[str]] = set()
    for p in range(len(sites)):
        for fi in range(len(inst.facilities)):
            radius = delta * d_site_fac[p, fi]
            removed = frozenset(
                inst.clients[cj]
                for cj in range(len(inst.clients))
                if d_site_cli[p, cj] <= radius + 1e-12
            )
            if removed:
                out.add(removed)
    return sorted(out, key=lambda s: (len(s), sorted(s)))


def sparsify_structures(
    inst: Instance,
    rho: float,
    delta: float,
    caps: tuple[int, int] | None = None,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """All (F0, C') pairs reachable with the given enumeration caps.

    F0 ranges over facility subsets of size at most cap1+cap2; C' is the
    client set minus any union of at most cap2 single-ball removals. The pair
    list is EST-independent, so callers reuse it across the estimate grid.
    """
    cap1, cap2 = caps if caps is not None else theoretical_caps(rho, delta)
    balls = _removal_ball_sets(inst, delta)
    unions: set[frozenset[str]] = {frozenset()}
    frontier: set[frozenset[str]] = {frozenset()}
    for _ in range(cap2):
        nxt: set[frozenset[str]] = set()
        for u in frontier:
            for ball in balls:
                merged = u | ball
                if merged not in unions:
                    unions.add(merged)
                    nxt.add(merged)
        if not nxt:
            break
        frontier = nxt
    f0_count = sum(
        math.comb(len(inst.facilities), s)
        for s in range(0, min(cap1 + cap2, len(inst.facilities)) + 1)
    )
    projected = f0_count * len(unions)
    if projected > max_candidates:
        raise SparsifyGuard(
            f"projected {projected} extended instances exceed the cap {max_candidates}"
        )
    all_clients = set(inst.clients)
    cprimes = sorted(
        {tuple(sorted(all_clients - u)) for u in unions}, key=lambda t: (len(t), t)
    )
    f0s: list[tuple[str, ...]] = []
    for s in range(0, min(cap1 + cap2, len(inst.facilities)) + 1):
        f0s.extend(itertools.combinations(inst.facilities, s))
    pairs = []
    seen = set()
    for f0 in f0s:
        for cp in cprimes:
            key = (f0, cp)
            if key not in seen and (f0 or cp):
                seen.add(key)
                pairs.append(key)
    return pairs


def sparsify_candidates(
    inst: Instance,
    rho: float,
    delta: float,
    est: float,
    c0: float,
    caps: tuple[int, int] | None = None,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
):
    """Stream of extended instances for one (c0, EST) pair."""
    for f0, cprime in sparsify_structures(inst, rho, delta, caps, max_candidates):
        yield ExtendedInstance(inst, f0, cprime, rho, delta, est, c0)


@dataclass
class KnapCandidate:
    extended: ExtendedInstance
    solution: tuple[str, ...]
    true_discounted_cost: float  # over all clients, at the alpha'' multiplier
    fractional_residual: int
    lp_objective: float
    certificates: list[Certificate] = field(default_factory=list)
    # diagnostic only: guaranteed for the witness (c0, EST) pair, not for all
    meets_own_est_bound: bool = False


def _resolve_fractional(y: np.ndarray, bs, state) -> tuple[np.ndarray, int, int | None]:
    """Round the at most two fractional coordinates; returns (y*, t, closed copy)."""
    frac = fractional_copies(y)
    t = len(frac)
    if t > 2:
        raise RoundingError(
            f"{t} fractional coordinates violate the basis counting bound\n" + state.dump()
        )
    y_star = np.rint(np.clip(y, 0.0, 1.0))
    closed: int | None = None
    if t == 1:
        closed = frac[0]
        y_star[closed] = 0.0
    elif t == 2:
        a, b = frac
        if abs(y[a] + y[b] - 1.0) > 1e-6:
            raise RoundingError(
                f"two fractional coordinates with mass {y[a] + y[b]} != 1\n" + state.dump()
            )
        wa, wb = float(bs.weight[a]), float(bs.weight[b])
        opened, closed = (a, b) if (wa, a) <= (wb, b) else (b, a)
        y_star[opened] = 1.0
        y_star[closed] = 0.0
    return y_star, t, closed


def solve_extended(ext: ExtendedInstance, tau: float) -> KnapCandidate | None:
    """Run the strengthened pipeline on one extended instance.

    Returns None when the relaxation is infeasible (the instance is then not
    the sparse one). Raises RoundingError if more than two coordinates stay
    fractional, which the basis structure rules out.
    """
    inst = ext.base
    con = inst.constraint
    assert isinstance(con, Knapsack)
    if sum(con.weights[f] for f in ext.f0) > con.budget + 1e-9:
        return None
    if not ext.f0 and not ext.cprime:
        return None
    try:
        frac_sol = solve_natural(inst, extended=ext)
    except InfeasibleLP:
        return None
    U = frac_sol.objective_value

    certs: list[Certificate] = []
    if ext.cprime:
        bs = duplicate_star_balanced(frac_sol, inst, ext)
    else:
        from .fractional import BallSystem

        bs = BallSystem(
            orig=list(inst.facilities),
            y=np.array([1.0 if f in ext.f0 else 0.0 for f in inst.facilities]),
            weight=np.array([con.weights[f] for f in inst.facilities]),
            dist=inst.dist_fc.copy(),
            clients=inst.clients,
            F=[set() for _ in inst.clients],
        )
    cols = sorted(inst.cli_pos[j] for j in ext.cprime)
    c_arr, r_arr, m_arr = offset_support(bs, inst, cols)
    b, initial_aux = choose_offset(c_arr, r_arr, m_arr, tau)
    dm = DiscretizedMetric(tau, b)
    virtuals = [
        VirtualClient(vid=f"~{f}", anchor=f, copies=frozenset(bs.copies_of(f))) for f in ext.f0
    ]
    y_raw, state = iter_round(bs, inst, dm, h=1, cols=cols, virtuals=virtuals)
    y_star, t, closed = _resolve_fractional(y_raw, bs, state)
    solution = bs.open_set(y_star)
    if not solution:
        return None
    if not set(ext.f0) <= set(solution):
        raise RoundingError(f"pre-selected facilities lost: {ext.f0} vs {solution}")
    total_w = sum(con.weights[f] for f in solution)
    if total_w > con.budget + 1e-7:
        raise RoundingError(f"solution weight {total_w} exceeds the budget {con.budget}")

    alpha = knapsack_alpha(tau, ext.delta)
    cost = discounted_cost(inst, solution, alpha)
    coef = knapsack_est_coefficient(tau, ext.rho, ext.delta)
    certs.append(Certificate("fractional_residual", float(t), 2.0, t <= 2))
    certs.append(Certificate.leq("solution_weight_le_budget", total_w, con.budget, tol=1e-7))
    if ext.cprime:
        stars = star_costs(bs, inst)
        far = [
            c
            for c in range(bs.n_copies)
            if all(inst.metric.d(bs.orig[c], f) > 1e-12 for f in ext.f0)
        ]
        worst = max((float(stars[c]) for c in far), default=0.0)
        certs.append(
            Certificate.leq("star_cost_le_2rhoEST", worst, 2.0 * ext.rho * ext.est)
        )
    closed_colocated_f0 = closed is not None and any(
        inst.metric.d(bs.orig[closed], f) <= 1e-12 for f in ext.f0
    )
    if closed is not None and not closed_colocated_f0:
        # a closed copy co-located with a pre-selected facility reroutes at
        # distance zero; the star-cost cap (and hence these sums) only covers
        # copies away from the pre-selected set
        certs.extend(_reroute_certificates(ext, bs, state, solution, closed, tau))

    return KnapCandidate(
        extended=ext,
        solution=solution,
        true_discounted_cost=cost,
        fractional_residual=t,
        lp_objective=U,
        certificates=certs,
        meets_own_est_bound=bool(cost <= coef * ext.est + 1e-6 * max(1.0, coef * ext.est)),
    )


def _reroute_certificates(ext, bs, state, solution, closed, tau) -> list[Certificate]:
    """Rerouting audit for clients whose final inner ball held the closed copy."""
    inst = ext.base
    sigma = knapsack_sigma(tau)
    gamma = ext.delta / (2.0 * sigma + ext.delta)
    eta = sigma + ext.delta
    closed_orig = bs.orig[closed]
    d = min(inst.metric.d(closed_orig, f) for f in solution)
    out: list[Certificate] = []
    j1_sum = 0.0
    j2_sum = 0.0
    members_1 = members_2 = 0
    for j in ext.cprime:
        if closed not in state.B.get(j, set()):
            continue
        cj = inst.cli_pos[j]
        c_to_closed = inst.metric.d(j, closed_orig)
        c_to_open = min(inst.metric.d(j, f) for f in solution)
        wj, rj = inst.w[cj], inst.r[cj]
        if c_to_closed >= gamma * d - 1e-12:
            members_1 += 1
            out.append(
                Certificate.leq(
                    f"reroute_J1[{j}]", c_to_open, (1.0 + 1.0 / gamma) * c_to_closed
                )
            )
            j1_sum += wj * max(c_to_open - (1.0 + 1.0 / gamma) * rj, 0.0)
        else:
            members_2 += 1
            out.append(
                Certificate.leq(f"reroute_J2[{j}]", c_to_open, eta * ext.radius_cap(j))
            )
            j2_sum += wj * max(c_to_open - eta / (1.0 - ext.delta) * rj, 0.0)
    if members_1:
        out.append(
            Certificate.leq(
                "reroute_J1_total",
                j1_sum,
                (1.0 + gamma) / gamma * 2.0 * ext.rho * ext.est,
            )
        )
    if members_2:
        out.append(
            Certificate.leq("reroute_J2_total", j2_sum, eta * ext.rho * ext.est)
        )
    return out


def _upper_bound_cost(inst: Instance) -> float:
    """Cost of the cheapest feasible singleton: a sound cap on the optimum."""
    con = inst.constraint
    assert isinstance(con, Knapsack)
    best = math.inf
    for f in inst.facilities:
        if con.weights[f] <= con.budget + 1e-12:
            best = min(best, discounted_cost(inst, [f], 1.0))
    if not math.isfinite(best):
        raise InstanceError("knapsack admits no feasible singleton")
    return best


def _saturation_threshold(inst: Instance, cprime: tuple[str, ...], delta: float) -> float:
    """Smallest rho*EST at which the strengthened rows all go vacuous.

    Above it, no pair is capped out, every star row is implied by the
    coupling rows, and each radius cap clears the farthest facility, so the
    relaxation no longer depends on EST and one solve covers the whole upper
    tail of the estimate grid (per surviving-client set and F0).
    """
    if not cprime:
        return 0.0
    cols = [inst.cli_pos[j] for j in cprime]
    contrib = (
        np.maximum(inst.dist_fc[:, cols] - inst.r[cols][None, :], 0.0)
        * inst.w[cols][None, :]
    )
    thr = max(float(contrib.max(initial=0.0)), float(contrib.sum(axis=1).max(initial=0.0)))
    kinks = inst.r[cols] / (1.0 - delta)
    weights = inst.w[cols]
    for cj, col in zip(cols, cols):
        reach = float(inst.dist_fc[:, col].max())
        close = inst.dist_cc[col, cols] <= delta * reach
        g = float(np.sum(weights[close] * np.maximum(reach - kinks[close], 0.0)))
        thr = max(thr, g)
    return thr


def _evaluate_pack(args):
    ext, tau = args
    try:
        return solve_extended(ext, tau)
    except RoundingError:
        raise


def solve_knapmeddis(
    inst: Instance,
    tau: float = 1.9,
    rho: float = 1.0 / 3.0,
    delta: float = 2.0 / 3.0,
    epsilon: float = 0.1,
    caps: tuple[int, int] | None = None,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    jobs: int = 1,
) -> SolveReport:
    """Full knapsack pipeline; returns the best candidate's report.

    Candidates are the product of the estimate grid and the (F0, C')
    enumeration; estimate pairs provably above a feasible solution's cost are
    skipped, which cannot exclude the certified witness pair.
    """
    if not isinstance(inst.constraint, Knapsack):
        raise InstanceError("solve_knapmeddis needs a knapsack constraint")
    if not (0.0 < rho < 1.0 and 0.0 < delta < 1.0):
        raise InstanceError("rho and delta must lie in (0, 1)")
    original = inst
    inst = normalize(inst)
    problems = validate(inst)
    if problems:
        raise InstanceError("invalid instance: " + "; ".join(problems))

    ub = _upper_bound_cost(inst)
    pairs = enumerate_estimates(inst, epsilon)
    kept_pairs = [
        (c0, est)
        for c0, est in pairs
        if c0 <= ub + 1e-9 and est <= (1.0 + epsilon) * ub + 1e-9
    ]
    structures = sparsify_structures(inst, rho, delta, caps, max_candidates)

    # group tasks: above the saturation threshold the LP is EST-independent,
    # so one representative solve covers every saturated estimate
    thresholds = {cp: _saturation_threshold(inst, cp, delta) for _, cp in structures}
    tasks: list[ExtendedInstance] = []
    member_ests: list[list[float]] = []
    class_index: dict[tuple, int] = {}
    rj_caches: dict[tuple, dict[str, float]] = {}
    for c0, est in kept_pairs:
        for f0, cprime in structures:
            saturated = rho * est >= thresholds[cprime] - 1e-12
            key = (f0, cprime, "sat") if saturated else (f0, cprime, est)
            if key in class_index:
                k = class_index[key]
                if est not in member_ests[k]:
                    member_ests[k].append(est)
                if est < tasks[k].est:
                    tasks[k].est = est
                    tasks[k]._rj = rj_caches.setdefault((cprime, est), {})
                continue
            ext = ExtendedInstance(inst, f0, cprime, rho, delta, est, c0)
            ext._rj = rj_caches.setdefault((cprime, est), {})
            class_index[key] = len(tasks)
            tasks.append(ext)
            member_ests.append([est])

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(_evaluate_pack, [(e, tau) for e in tasks], chunksize=16)
            )
    else:
        results = [_evaluate_pack((e, tau)) for e in tasks]

    coef = knapsack_est_coefficient(tau, rho, delta)
    candidates = []
    for cand, ests in zip(results, member_ests):
        if cand is None:
            continue
        cand.meets_own_est_bound = any(
            cand.true_discounted_cost <= coef * e + 1e-6 * max(1.0, coef * e)
            for e in ests
        )
        candidates.append(cand)
    if not candidates:
        raise RoundingError("no feasible extended instance produced a candidate")
    best = min(candidates, key=lambda c: (c.true_discounted_cost, c.solution))

    alpha = knapsack_alpha(tau, delta)
    certs = list(best.certificates)
    certs.append(
        Certificate(
            "exists_candidate_within_est_bound",
            0.0 if any(c.meets_own_est_bound for c in candidates) else 1.0,
            0.0,
            any(c.meets_own_est_bound for c in candidates),
        )
    )
    cap1, cap2 = caps if caps is not None else theoretical_caps(rho, delta)
    theo1, theo2 = theoretical_caps(rho, delta)
    below_theoretical = cap1 < theo1 or cap2 < theo2

    summaries = [
        {
            "f0": list(c.extended.f0),
            "removed": len(inst.clients) - len(c.extended.cprime),
            "est": c.extended.est,
            "cost": c.true_discounted_cost,
            "t": c.fractional_residual,
            "lpObjective": c.lp_objective,
            "withinEstBound": c.meets_own_est_bound,
        }
        for c in candidates
    ]
    return SolveReport(
        tau=tau,
        b=float("nan"),
        h=1,
        solution=best.solution,
        objective=discounted_cost(original, best.solution, alpha),
        alpha=alpha,
        beta=coef * (1.0 + epsilon),
        iterations=[],
        final_levels={},
        certificates=certs,
        lp_optimum=best.lp_objective / inst.scale * original.scale,
        initial_aux=float("nan"),
        extras={
            "rho": rho,
            "delta": delta,
            "epsilon": epsilon,
            "caps": [cap1, cap2],
            "capsBelowTheoretical": below_theoretical,
            "estCoefficient": coef,
            "bestEst": best.extended.est,
            "bestF0": list(best.extended.f0),
            "candidates": summaries,
            "scale": inst.scale,
            "evaluated": len(tasks),
            "feasible": len(candidates),
        },
    )
