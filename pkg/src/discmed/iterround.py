"""Iterative ball-shrinking rounding and the end-to-end discount solvers.

Each iteration re-solves an auxiliary LP over the duplicated facility
universe to an optimal vertex, then either promotes one pending client or
shrinks one saturated inner ball, maintaining a core client set whose outer
balls form one laminar family per step-size unit. With step size 2 and a
cardinality row the final vertex is integral; with step size 1 the same
holds for matroid rows, and a knapsack row leaves at most two fractional
coordinates for the caller to resolve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .discretize import DiscretizedMetric, choose_offset, discretization_ratio
from .fractional import (
    BallSystem,
    duplicate_facilities,
    make_distance_optimal,
    matroid_polytope_rows,
    solve_natural,
)
from .instance import (
    Cardinality,
    Instance,
    InstanceError,
    Knapsack,
    Matroid,
    discounted_cost,
    normalize,
    validate,
)
from .lpcore import LinearProgram, solve

SNAP_TOL = 1e-7
OBJ_TOL = 1e-7


class RoundingError(RuntimeError):
    """Numerical degeneracy: a structural guarantee failed at runtime."""


class IntegralityError(RoundingError):
    def __init__(self, message: str, state: "RoundState"):
        super().__init__(message + "\n" + state.dump())
        self.state = state


@dataclass
class VirtualClient:
    """Zero-discount level(-1) client pinning unit mass on one facility's copies."""

    vid: str
    anchor: str
    copies: frozenset[int]


@dataclass
class RoundState:
    bs: BallSystem
    dm: DiscretizedMetric
    tau: float
    h: int
    cols: list[int]  # participating real client columns
    weights: np.ndarray
    discounts: np.ndarray
    chat: np.ndarray  # rounded copy-client distances
    levels_mat: np.ndarray
    F: dict[str, set[int]]
    B: dict[str, set[int]]
    level: dict[str, int]
    C0: set[str]
    C1: set[str]
    Cstar: set[str]
    virtuals: dict[str, VirtualClient] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    max_contribution_drift: float = 0.0
    cstar_violations: int = 0

    def col_of(self, key: str) -> int:
        return self.bs.clients.index(key)

    def dump(self) -> str:
        lines = [
            f"tau={self.tau} h={self.h} b={self.dm.b}",
            f"C0={sorted(self.C0)} C1={sorted(self.C1)} Cstar={sorted(self.Cstar)}",
            f"levels={ {k: self.level[k] for k in sorted(self.level)} }",
        ]
        return "\n".join(lines)


def bicriteria_factors(tau: float, h: int) -> tuple[float, float]:
    """(alpha, beta) of the discount-inflation guarantee at step size h."""
    radial = (3.0 * tau**h - 1.0) / (tau**h - 1.0)
    return tau * radial, radial * discretization_ratio(tau)


def nearest_open_distance_bound(state: RoundState, key: str) -> float:
    """Certified radius (3 tau^h - 1)/(tau^h - 1) * D_level for a client."""
    radial = (3.0 * state.tau**state.h - 1.0) / (state.tau**state.h - 1.0)
    return radial * state.dm.level_value(state.level[key])


def update_cstar(state: RoundState, key: str) -> bool:
    """Re-admit ``key`` into the core set; evict members it supersedes.

    Returns True when the client was admitted. The client itself is removed
    first, so membership is decided purely against the other members.
    """
    state.Cstar.discard(key)
    Fk = state.F[key]
    lk = state.level[key]
    for other in state.Cstar:
        if state.level[other] <= lk and Fk & state.F[other]:
            _check_cstar(state)
            return False
    state.Cstar.add(key)
    for other in sorted(state.Cstar - {key}):
        if state.level[other] >= lk + state.h and Fk & state.F[other]:
            state.Cstar.discard(other)
    _check_cstar(state)
    return True


def _check_cstar(state: RoundState) -> None:
    members = sorted(state.Cstar)
    for a_pos, a in enumerate(members):
        for b in members[a_pos + 1 :]:
            if state.F[a] & state.F[b] and abs(state.level[a] - state.level[b]) >= state.h:
                state.cstar_violations += 1


def _family_rows(inst: Instance, bs: BallSystem) -> list[tuple[dict, str, float]]:
    con = inst.constraint
    if isinstance(con, Cardinality):
        return [({c: 1.0 for c in range(bs.n_copies)}, "<=", float(con.k))]
    if isinstance(con, Matroid):
        copies_of = {f: [] for f in inst.facilities}
        for c, f in enumerate(bs.orig):
            copies_of[f].append(c)
        return matroid_polytope_rows(con.spec, inst.facilities, copies_of)
    if isinstance(con, Knapsack):
        return [({c: float(bs.weight[c]) for c in range(bs.n_copies)}, "<=", float(con.budget))]
    raise InstanceError(f"unknown constraint family {type(con).__name__}")


def _aux_lp(state: RoundState, family_rows) -> tuple[LinearProgram, float]:
    bs = state.bs
    coeff = np.zeros(bs.n_copies)
    const = 0.0
    for key in state.C0:
        cj = state.col_of(key)
        wj, rj = state.weights[cj], state.discounts[cj]
        for c in state.F[key]:
            coeff[c] += wj * max(state.chat[c, cj] - state.tau * rj, 0.0)
    for key in state.C1:
        cj = state.col_of(key)
        wj, rj = state.weights[cj], state.discounts[cj]
        head = wj * max(state.dm.level_value(state.level[key]) - state.tau * rj, 0.0)
        const += head
        for c in state.B[key]:
            coeff[c] += wj * max(state.chat[c, cj] - state.tau * rj, 0.0) - head
    lp = LinearProgram(bs.n_copies, objective=coeff)
    for key in sorted(state.C0):
        lp.add_row({c: 1.0 for c in state.F[key]}, "=", 1.0)
    for key in sorted(state.C1):
        if state.B[key]:
            lp.add_row({c: 1.0 for c in state.B[key]}, "<=", 1.0)
    for key in sorted(state.Cstar):
        lp.add_row({c: 1.0 for c in state.F[key]}, "=", 1.0)
    for coeffs, rel, rhs in family_rows:
        lp.add_row(coeffs, rel, rhs)
    return lp, const


def _contribution(state: RoundState, key: str, y: np.ndarray) -> float:
    cj = state.col_of(key)
    wj, rj = state.weights[cj], state.discounts[cj]
    if key in state.C0:
        return float(
            sum(y[c] * wj * max(state.chat[c, cj] - state.tau * rj, 0.0) for c in state.F[key])
        )
    head = wj * max(state.dm.level_value(state.level[key]) - state.tau * rj, 0.0)
    ball = float(sum(y[c] for c in state.B[key]))
    return float(
        sum(y[c] * wj * max(state.chat[c, cj] - state.tau * rj, 0.0) for c in state.B[key])
        + (1.0 - ball) * head
    )


def _inner_ball(state: RoundState, key: str) -> set[int]:
    cj = state.col_of(key)
    cap = state.level[key] - 1
    return {c for c in state.F[key] if state.levels_mat[c, cj] <= cap}


def iter_round(
    bs: BallSystem,
    inst: Instance,
    dm: DiscretizedMetric,
    h: int,
    cols: Sequence[int] | None = None,
    virtuals: Iterable[VirtualClient] = (),
) -> tuple[np.ndarray, RoundState]:
    """Run the rounding loop; returns the final vertex and the state.

    The vertex is *not* snapped here; use ``snap_integral`` (or the knapsack
    resolution) on the result. ``cols`` restricts the participating clients.
    """
    if h not in (1, 2):
        raise InstanceError("step size must be 1 or 2")
    if cols is None:
        cols = [cj for cj in range(len(bs.clients)) if bs.F[cj]]
    chat = dm.round_up_array(bs.dist)
    levels_mat = dm.levels_array(bs.dist)
    state = RoundState(
        bs=bs,
        dm=dm,
        tau=dm.tau,
        h=h,
        cols=list(cols),
        weights=inst.w,
        discounts=inst.r,
        chat=chat,
        levels_mat=levels_mat,
        F={},
        B={},
        level={},
        C0=set(),
        C1=set(),
        Cstar=set(),
    )
    for cj in cols:
        key = bs.clients[cj]
        if not bs.F[cj]:
            raise InstanceError(f"client {key} has an empty outer ball")
        state.F[key] = set(bs.F[cj])
        state.level[key] = max(int(levels_mat[c, cj]) for c in bs.F[cj])
        state.B[key] = set()
        state.C0.add(key)
    for v in sorted(virtuals, key=lambda v: v.vid):
        state.virtuals[v.vid] = v
        state.F[v.vid] = set(v.copies)
        state.level[v.vid] = -1
        state.B[v.vid] = set()
        if not update_cstar(state, v.vid):
            raise RoundingError(f"virtual client {v.vid} blocked from the core set")

    family_rows = _family_rows(inst, bs)
    max_level = max((state.level[k] for k in state.level), default=0)
    budget = len(cols) * (max_level + 3) + len(cols) + 4
    y = np.zeros(bs.n_copies)
    for _ in range(budget):
        lp, const = _aux_lp(state, family_rows)
        res = solve(lp)
        y = res.values
        aux = res.objective_value + const
        if state.objectives and aux > state.objectives[-1] + OBJ_TOL * max(1.0, abs(aux)):
            raise RoundingError(
                f"auxiliary objective increased: {state.objectives[-1]} -> {aux}"
            )
        state.objectives.append(aux)

        if state.C0:
            key = min(state.C0)
            before = _contribution(state, key, y)
            state.C0.discard(key)
            state.C1.add(key)
            state.B[key] = _inner_ball(state, key)
            update_cstar(state, key)
            after = _contribution(state, key, y)
            state.max_contribution_drift = max(
                state.max_contribution_drift, abs(after - before)
            )
            state.trace.append({"action": "move", "client": key, "objective": aux})
            continue
        shrinkable = sorted(
            key
            for key in state.C1
            if state.B[key] and sum(y[c] for c in state.B[key]) >= 1.0 - SNAP_TOL
        )
        if shrinkable:
            key = shrinkable[0]
            before = _contribution(state, key, y)
            state.level[key] -= 1
            state.F[key] = set(state.B[key])
            state.B[key] = _inner_ball(state, key)
            update_cstar(state, key)
            after = _contribution(state, key, y)
            state.max_contribution_drift = max(
                state.max_contribution_drift, abs(after - before)
            )
            state.trace.append({"action": "shrink", "client": key, "objective": aux})
            continue
        state.trace.append({"action": "stop", "client": "", "objective": aux})
        break
    else:
        raise RoundingError("iteration budget exhausted without convergence")

    if state.max_contribution_drift > OBJ_TOL:
        raise RoundingError(
            f"client contribution drifted by {state.max_contribution_drift:.3g} on rebuild"
        )
    return y, state


def fractional_copies(y: np.ndarray, tol: float = SNAP_TOL) -> list[int]:
    return [int(c) for c in np.nonzero((y > tol) & (y < 1.0 - tol))[0]]


def snap_integral(y: np.ndarray, state: RoundState) -> np.ndarray:
    frac = fractional_copies(y)
    if frac:
        raise IntegralityError(
            f"integral output expected, got fractional coordinates {frac}: "
            f"{[float(y[c]) for c in frac]}",
            state,
        )
    return np.rint(y)


# ---------------------------------------------------------------------------
# reports and the cardinality / matroid pipelines


@dataclass
class Certificate:
    name: str
    lhs: float
    rhs: float
    holds: bool

    @staticmethod
    def leq(name: str, lhs: float, rhs: float, tol: float = 1e-6) -> "Certificate":
        return Certificate(name, float(lhs), float(rhs), bool(lhs <= rhs + tol * max(1.0, abs(rhs))))


@dataclass
class SolveReport:
    tau: float
    b: float
    h: int
    solution: tuple[str, ...]
    objective: float  # discounted cost of the solution at multiplier alpha
    alpha: float
    beta: float
    iterations: list[dict]
    final_levels: dict[str, int]
    certificates: list[Certificate]
    lp_optimum: float
    initial_aux: float
    extras: dict = field(default_factory=dict)

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.certificates)

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "b": self.b,
            "h": self.h,
            "solution": list(self.solution),
            "objective": self.objective,
            "alpha": self.alpha,
            "beta": self.beta,
            "iterations": self.iterations,
            "finalLevels": self.final_levels,
            "certificates": [
                {"name": c.name, "lhs": c.lhs, "rhs": c.rhs, "holds": c.holds}
                for c in self.certificates
            ],
            "lpOptimum": self.lp_optimum,
            "initialAux": self.initial_aux,
            **self.extras,
        }


def offset_support(bs: BallSystem, inst: Instance, cols: Sequence[int]):
    """(c, r, mass) triples of the duplicated support, for the offset search."""
    cs, rs, ms = [], [], []
    for cj in cols:
        for c in bs.F[cj]:
            cs.append(bs.dist[c, cj])
            rs.append(inst.r[cj])
            ms.append(bs.y[c] * inst.w[cj])
    return np.array(cs), np.array(rs), np.array(ms)


def _pipeline(inst: Instance, tau: float, h: int) -> SolveReport:
    original = inst
    inst = normalize(inst)  # sub-unit separations are repaired, not rejected
    problems = validate(inst)
    if problems:
        raise InstanceError("invalid instance: " + "; ".join(problems))

    frac = solve_natural(inst)
    frac = make_distance_optimal(frac, inst)
    bs = duplicate_facilities(frac, inst)
    cols = [cj for cj in range(len(inst.clients)) if bs.F[cj]]
    c_arr, r_arr, m_arr = offset_support(bs, inst, cols)
    b, initial_aux = choose_offset(c_arr, r_arr, m_arr, tau)
    dm = DiscretizedMetric(tau, b)
    y_raw, state = iter_round(bs, inst, dm, h, cols=cols)
    y_star = snap_integral(y_raw, state)
    solution = bs.open_set(y_star)
    if not solution:
        raise RoundingError("rounding opened no facility")

    alpha, beta = bicriteria_factors(tau, h)
    certs: list[Certificate] = []
    certs.append(
        Certificate.leq(
            "initial_aux_le_discretized_lp",
            initial_aux,
            discretization_ratio(tau) * frac.objective_value,
        )
    )
    final_levels = {key: state.level[key] for key in map(inst.clients.__getitem__, cols)}
    level_obj = float(
        sum(
            inst.w[cj] * max(dm.level_value(state.level[inst.clients[cj]]) - tau * inst.r[cj], 0.0)
            for cj in cols
        )
    )
    certs.append(Certificate.leq("final_level_objective_le_initial_aux", level_obj, initial_aux))
    worst_step = max(
        (b2 - a2 for a2, b2 in zip(state.objectives, state.objectives[1:])), default=0.0
    )
    certs.append(Certificate.leq("aux_objective_nonincreasing", worst_step, 0.0, tol=OBJ_TOL))
    certs.append(
        Certificate.leq("contribution_preserved", state.max_contribution_drift, 0.0, tol=OBJ_TOL)
    )
    certs.append(Certificate("cstar_discipline", float(state.cstar_violations), 0.0, state.cstar_violations == 0))
    open_rows = [inst.fac_pos[f] for f in solution]
    for cj in cols:
        key = inst.clients[cj]
        actual = float(inst.dist_fc[open_rows, cj].min())
        certs.append(
            Certificate.leq(f"near_facility[{key}]", actual, nearest_open_distance_bound(state, key))
        )
    inner_mass = max((sum(y_star[c] for c in state.B[inst.clients[cj]]) for cj in cols), default=0.0)
    certs.append(Certificate.leq("final_inner_mass_zero", float(inner_mass), 0.0, tol=SNAP_TOL))
    scaled_cost = discounted_cost(inst, solution, alpha)
    certs.append(Certificate.leq("bicriteria_vs_lp", scaled_cost, beta * frac.objective_value))

    if isinstance(inst.constraint, Matroid):
        spec = inst.constraint.spec
        if not spec.is_independent(solution):
            raise RoundingError(f"output {solution} is not independent in the matroid")
        certs.append(
            Certificate("independent_output", float(len(solution) - spec.rank(solution)), 0.0, True)
        )
    elif isinstance(inst.constraint, Cardinality):
        if len(solution) > inst.constraint.k:
            raise RoundingError("output exceeds the cardinality bound")

    return SolveReport(
        tau=tau,
        b=b,
        h=h,
        solution=solution,
        objective=discounted_cost(original, solution, alpha),
        alpha=alpha,
        beta=beta,
        iterations=state.trace,
        final_levels=final_levels,
        certificates=certs,
        lp_optimum=frac.objective_value / inst.scale * original.scale,
        initial_aux=initial_aux,
        extras={"scale": inst.scale},
    )


def solve_kmeddis(inst: Instance, tau: float = 1.91, h: int = 2) -> SolveReport:
    """Cardinality-constrained pipeline (step size 2 by default)."""
    if not isinstance(inst.constraint, Cardinality):
        raise InstanceError("solve_kmeddis needs a cardinality constraint")
    if not tau > 1.0:
        raise InstanceError("tau must exceed 1")
    return _pipeline(inst, tau, h)


def solve_matmeddis(inst: Instance, tau: float = 2.36) -> SolveReport:
    """Matroid-constrained pipeline (step size 1)."""
    if not isinstance(inst.constraint, Matroid):
        raise InstanceError("solve_matmeddis needs a matroid constraint")
    if not tau > 1.0:
        raise InstanceError("tau must exceed 1")
    return _pipeline(inst, tau, 1)
