"""Natural relaxations and fractional-solution post-processing.

Builds the assignment LPs for all three constraint families, repairs
solutions to be distance-optimal, and splits facilities into co-located
copies so that every client's outer ball carries exactly unit opening mass.
The knapsack pipeline uses a star-cost-balanced variant of the splitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instance import (
    Cardinality,
    ExplicitMatroid,
    Instance,
    InstanceError,
    Knapsack,
    Matroid,
    PartitionMatroid,
    UniformMatroid,
)
from .lpcore import BasicOptimal, LinearProgram, solve

SUPPORT_TOL = 1e-9


@dataclass
class FractionalSolution:
    """Assignment fractions x (facility x client) and opening fractions y."""

    x: np.ndarray
    y: np.ndarray
    objective_value: float


@dataclass
class NaturalLP:
    lp: LinearProgram
    y_index: dict[int, int]  # facility position -> variable
    x_index: dict[tuple[int, int], int]  # (facility pos, client pos) -> variable
    client_cols: list[int]  # client positions covered by the LP
    eliminated: set[tuple[int, int]]  # pairs pinned to zero and left out


def matroid_polytope_rows(spec, fac_ids, copies_of) -> list[tuple[dict, str, float]]:
    """Rank constraints over a (possibly duplicated) facility universe.

    ``copies_of`` maps each original facility id to the variable indices of
    its co-located copies. Together with per-copy [0,1] bounds these rows
    describe the exact polytope of the parallel-extension matroid: singleton
    rows cover every independent subset, so only dependent subsets need rows.
    """
    rows: list[tuple[dict, str, float]] = []
    if isinstance(spec, UniformMatroid):
        for f in fac_ids:
            if len(copies_of[f]) > 1:
                rows.append(({v: 1.0 for v in copies_of[f]}, "<=", 1.0))
        all_vars = {v: 1.0 for f in fac_ids for v in copies_of[f]}
        rows.append((all_vars, "<=", float(spec.rank_bound)))
        return rows
    if isinstance(spec, PartitionMatroid):
        for f in fac_ids:
            if len(copies_of[f]) > 1:
                rows.append(({v: 1.0 for v in copies_of[f]}, "<=", 1.0))
        for part, cap in zip(spec.parts, spec.caps):
            coeffs = {v: 1.0 for f in part for v in copies_of[f]}
            if coeffs:
                rows.append((coeffs, "<=", float(cap)))
        return rows
    if isinstance(spec, ExplicitMatroid):
        n = len(spec.elements)
        for f in fac_ids:
            rank1 = spec.rank([f])
            if len(copies_of[f]) > 1 or rank1 == 0:
                rows.append(({v: 1.0 for v in copies_of[f]}, "<=", float(rank1)))
        table = spec.rank_table
        sizes = np.array([m.bit_count() for m in range(1 << n)])
        for mask in np.nonzero(table < sizes)[0]:
            members = [spec.elements[k] for k in range(n) if mask >> k & 1]
            if len(members) < 2:
                continue  # singleton loops already handled above
            coeffs = {v: 1.0 for f in members for v in copies_of[f]}
            rows.append((coeffs, "<=", float(table[mask])))
        return rows
    raise InstanceError(f"unknown matroid spec {type(spec).__name__}")


def build_natural_lp(inst: Instance, extended=None) -> NaturalLP:
    """LP-k / matroid / knapsack relaxation; with ``extended`` the knapsack
    pre-selection, distance-cap, contribution-cap and star-cap rows are added
    and capped-out x variables are eliminated rather than merely bounded."""
    nf = len(inst.facilities)
    if extended is None:
        cols = list(range(len(inst.clients)))
        f0_pos: set[int] = set()
    else:
        cols = sorted(inst.cli_pos[j] for j in extended.cprime)
        f0_pos = {inst.fac_pos[f] for f in extended.f0}

    contrib = np.maximum(inst.dist_fc - inst.r[None, :], 0.0) * inst.w[None, :]

    eliminated: set[tuple[int, int]] = set()
    if extended is not None:
        rho_est = extended.rho * extended.est
        for cj in cols:
            rj_cap = extended.radius_cap(inst.clients[cj])
            for fi in range(nf):
                if inst.dist_fc[fi, cj] > rj_cap:
                    eliminated.add((fi, cj))  # beyond the per-client radius
                elif fi not in f0_pos and contrib[fi, cj] > rho_est + 1e-12:
                    eliminated.add((fi, cj))  # single pair already too costly

    y_index = {fi: fi for fi in range(nf)}
    x_index: dict[tuple[int, int], int] = {}
    nxt = nf
    for cj in cols:
        for fi in range(nf):
            if (fi, cj) not in eliminated:
                x_index[(fi, cj)] = nxt
                nxt += 1

    n_vars = nxt
    objective = np.zeros(n_vars)
    lo = np.zeros(n_vars)
    hi = np.ones(n_vars)
    for (fi, cj), v in x_index.items():
        objective[v] = contrib[fi, cj]
    if extended is not None:
        for fi in f0_pos:
            lo[fi] = 1.0  # pre-selected facilities stay fully open

    lp = LinearProgram(n_vars, objective=objective, lo=lo, hi=hi)
    for cj in cols:
        coeffs = {x_index[(fi, cj)]: 1.0 for fi in range(nf) if (fi, cj) in x_index}
        lp.add_row(coeffs, "=", 1.0)
    con = inst.constraint
    if isinstance(con, Cardinality):
        lp.add_row({y_index[fi]: 1.0 for fi in range(nf)}, "<=", float(con.k))
    elif isinstance(con, Matroid):
        copies_of = {f: [y_index[inst.fac_pos[f]]] for f in inst.facilities}
        for coeffs, rel, rhs in matroid_polytope_rows(con.spec, inst.facilities, copies_of):
            lp.add_row(coeffs, rel, rhs)
    elif isinstance(con, Knapsack):
        lp.add_row(
            {y_index[fi]: float(con.weights[inst.facilities[fi]]) for fi in range(nf)},
            "<=",
            float(con.budget),
        )
    else:
        raise InstanceError(f"unknown constraint family {type(con).__name__}")
    for (fi, cj), v in x_index.items():
        lp.add_row({v: 1.0, y_index[fi]: -1.0}, "<=", 0.0)
    if extended is not None:
        rho_est = extended.rho * extended.est
        for fi in range(nf):
            if fi in f0_pos:
                continue
            coeffs = {
                x_index[(fi, cj)]: contrib[fi, cj]
                for cj in cols
                if (fi, cj) in x_index and contrib[fi, cj] > 0
            }
            coeffs[y_index[fi]] = coeffs.get(y_index[fi], 0.0) - rho_est
            lp.add_row(coeffs, "<=", 0.0)  # per-facility star-cost cap
    return NaturalLP(lp, y_index, x_index, cols, eliminated)


def decode(nat: NaturalLP, inst: Instance, res: BasicOptimal) -> FractionalSolution:
    nf, nc = len(inst.facilities), len(inst.clients)
    x = np.zeros((nf, nc))
    y = np.zeros(nf)
    for fi, v in nat.y_index.items():
        y[fi] = res.values[v]
    for (fi, cj), v in nat.x_index.items():
        x[fi, cj] = res.values[v]
    x[np.abs(x) < SUPPORT_TOL] = 0.0
    y[np.abs(y) < SUPPORT_TOL] = 0.0
    np.clip(x, 0.0, 1.0, out=x)
    np.clip(y, 0.0, 1.0, out=y)
    return FractionalSolution(x=x, y=y, objective_value=res.objective_value)


def solve_natural(inst: Instance, extended=None) -> FractionalSolution:
    nat = build_natural_lp(inst, extended)
    return decode(nat, inst, solve(nat.lp))


def make_distance_optimal(sol: FractionalSolution, inst: Instance) -> FractionalSolution:
    """Water-fill each client's unit of assignment onto nearest facilities.

    Ties are broken by facility id, so any facility strictly closer than a
    used one is filled to its full opening. The objective never increases and
    y is untouched.
    """
    nf, nc = sol.x.shape
    order_key = sorted(range(nf), key=lambda fi: inst.facilities[fi])
    x = np.zeros_like(sol.x)
    for cj in range(nc):
        if sol.x[:, cj].sum() <= SUPPORT_TOL:
            continue  # client not covered by this solution (knapsack prunes)
        order = sorted(order_key, key=lambda fi: inst.dist_fc[fi, cj])
        remaining = 1.0
        for fi in order:
            if remaining <= 1e-15:
                break
            take = min(float(sol.y[fi]), remaining)
            x[fi, cj] = take
            remaining -= take
        if remaining > 1e-7:
            raise InstanceError("water-filling ran out of opening mass")
    contrib = np.maximum(inst.dist_fc - inst.r[None, :], 0.0) * inst.w[None, :]
    return FractionalSolution(x=x, y=sol.y.copy(), objective_value=float((contrib * x).sum()))


@dataclass
class BallSystem:
    """Duplicated facility universe plus per-client outer balls.

    Copies are indexed densely; ``orig[c]`` is the original facility id of
    copy c, copies inherit distances and knapsack weights. ``F[cj]`` is the
    outer ball (copy indices) of the client in column ``clients[cj]``.
    """

    orig: list[str]
    y: np.ndarray
    weight: np.ndarray
    dist: np.ndarray  # (n_copies, n_clients)
    clients: tuple[str, ...]
    F: list[set[int]]

    @property
    def n_copies(self) -> int:
        return len(self.orig)

    def copies_of(self, facility: str) -> list[int]:
        return [c for c, f in enumerate(self.orig) if f == facility]

    def ball_mass(self, cj: int) -> float:
        return float(sum(self.y[c] for c in self.F[cj]))

    def open_set(self, y_star: np.ndarray, tol: float = 1e-7) -> tuple[str, ...]:
        """Original ids of opened copies, co-located duplicates collapsed."""
        return tuple(sorted({self.orig[c] for c in np.nonzero(y_star > 1.0 - tol)[0]}))


def _normalized_columns(x: np.ndarray, cols: list[int]) -> np.ndarray:
    out = x.copy()
    for cj in cols:
        s = out[:, cj].sum()
        if s > SUPPORT_TOL:
            out[:, cj] /= s
    return out


def duplicate_facilities(sol: FractionalSolution, inst: Instance) -> BallSystem:
    """Split facilities so every positive assignment uses a copy fully.

    After splitting, x restricted to any client is 0 or the copy's full
    opening, outer balls carry unit mass, and per-original mass is preserved.
    """
    nf, nc = sol.x.shape
    cols = [cj for cj in range(nc) if sol.x[:, cj].sum() > SUPPORT_TOL]
    x = _normalized_columns(sol.x, cols)
    orig: list[str] = []
    y: list[float] = []
    weight: list[float] = []
    rows: list[int] = []
    F: list[set[int]] = [set() for _ in range(nc)]
    for fi in range(nf):
        fid = inst.facilities[fi]
        yi = float(sol.y[fi])
        levels = sorted({float(v) for v in x[fi, :] if v > SUPPORT_TOL})
        cuts: list[float] = []
        for v in levels:
            if not cuts or v - cuts[-1] > 1e-12:
                cuts.append(v)
        if not cuts or yi - cuts[-1] > 1e-12:
            cuts.append(max(yi, cuts[-1] if cuts else 0.0))
        base = len(orig)
        prev = 0.0
        for v in cuts:
            orig.append(fid)
            y.append(v - prev)
            weight.append(inst.weight_of(fid))
            rows.append(fi)
            prev = v
        for cj in range(nc):
            v = x[fi, cj]
            if v <= SUPPORT_TOL:
                continue
            t = min(range(len(cuts)), key=lambda k: abs(cuts[k] - v))
            F[cj].update(base + k for k in range(t + 1))
    dist = inst.dist_fc[rows, :]
    bs = BallSystem(
        orig=orig,
        y=np.array(y),
        weight=np.array(weight),
        dist=dist,
        clients=inst.clients,
        F=F,
    )
    for cj in cols:
        if abs(bs.ball_mass(cj) - 1.0) > 1e-9:
            raise InstanceError(f"outer ball of {inst.clients[cj]} has mass {bs.ball_mass(cj)}")
    return bs


def duplicate_star_balanced(sol: FractionalSolution, inst: Instance, extended) -> BallSystem:
    """Facility splitting that also balances per-copy star costs.

    Copies are selected for each assignment in nondecreasing order of their
    current star cost, so every copy not co-located with a pre-selected
    facility ends with star cost at most twice the per-facility cap.
    """
    nf, nc = sol.x.shape
    cprime_cols = sorted(inst.cli_pos[j] for j in extended.cprime)
    x = _normalized_columns(sol.x, [cj for cj in cprime_cols if sol.x[:, cj].sum() > SUPPORT_TOL])
    contrib = np.maximum(inst.dist_fc - inst.r[None, :], 0.0) * inst.w[None, :]

    orig: list[str] = []
    y: list[float] = []
    rows: list[int] = []
    star: list[float] = []
    alive: list[bool] = []
    copies: dict[int, list[int]] = {}
    F: list[set[int]] = [set() for _ in range(nc)]

    for fi in range(nf):
        copies[fi] = [len(orig)]
        orig.append(inst.facilities[fi])
        y.append(float(sol.y[fi]))
        rows.append(fi)
        alive.append(True)
        members = [cj for cj in cprime_cols if x[fi, cj] > SUPPORT_TOL]
        star.append(float(sum(contrib[fi, cj] for cj in members)))
        for cj in members:
            F[cj].add(copies[fi][0])

    def split(c: int, take: float) -> int:
        """Split copy c into (selected part of mass take, remainder)."""
        c1, c2 = len(orig), len(orig) + 1
        orig.extend([orig[c], orig[c]])
        rows.extend([rows[c], rows[c]])
        y.extend([take, y[c] - take])
        star.extend([star[c], star[c]])
        alive.extend([True, True])
        alive[c] = False
        fi = rows[c]
        copies[fi] = [k for k in copies[fi] if k != c] + [c1, c2]
        for ball in F:
            if c in ball:
                ball.discard(c)
                ball.update((c1, c2))
        return c1

    for fi in range(nf):
        for cj in cprime_cols:
            need = float(x[fi, cj])
            if need <= SUPPORT_TOL:
                continue
            group = sorted(copies[fi], key=lambda c: (star[c], c))
            selected: list[int] = []
            acc = 0.0
            for c in group:
                if acc >= need - 1e-12:
                    break
                room = need - acc
                if y[c] <= room + 1e-12:
                    selected.append(c)
                    acc += y[c]
                else:
                    selected.append(split(c, room))
                    acc = need
            if abs(acc - need) > 1e-7:
                raise InstanceError("star-balanced split could not match assignment mass")
            F[cj].difference_update(copies[fi])
            F[cj].update(selected)
            gone = contrib[fi, cj]
            for c in copies[fi]:
                if c not in selected:
                    star[c] -= gone
    # compact away dead (fully split) copies
    keep = [c for c in range(len(orig)) if alive[c]]
    remap = {c: k for k, c in enumerate(keep)}
    bs = BallSystem(
        orig=[orig[c] for c in keep],
        y=np.array([y[c] for c in keep]),
        weight=np.array([inst.weight_of(orig[c]) for c in keep]),
        dist=inst.dist_fc[[rows[c] for c in keep], :],
        clients=inst.clients,
        F=[{remap[c] for c in ball} for ball in F],
    )
    _audit_star_balance(bs, inst, extended, sol.objective_value)
    return bs


def star_costs(bs: BallSystem, inst: Instance) -> np.ndarray:
    """Recompute per-copy star costs from the final outer balls."""
    contrib = np.maximum(bs.dist - inst.r[None, :], 0.0) * inst.w[None, :]
    out = np.zeros(bs.n_copies)
    for cj, ball in enumerate(bs.F):
        for c in ball:
            out[c] += contrib[c, cj]
    return out


def _audit_star_balance(bs: BallSystem, inst: Instance, extended, lp_objective: float) -> None:
    for j in extended.cprime:
        cj = inst.cli_pos[j]
        if abs(bs.ball_mass(cj) - 1.0) > 1e-9:
            raise InstanceError(f"outer ball of {j} has mass {bs.ball_mass(cj)}")
    if isinstance(inst.constraint, Knapsack):
        total = float(np.sum(bs.weight * bs.y))
        if total > inst.constraint.budget + 1e-7:
            raise InstanceError("duplication broke the knapsack budget")
    for f in extended.f0:
        mass = float(sum(bs.y[c] for c in bs.copies_of(f)))
        if abs(mass - 1.0) > 1e-7:
            raise InstanceError(f"pre-selected facility {f} has copy mass {mass}")
    contrib = np.maximum(bs.dist - inst.r[None, :], 0.0) * inst.w[None, :]
    obj = 0.0
    for j in extended.cprime:
        cj = inst.cli_pos[j]
        obj += float(sum(bs.y[c] * contrib[c, cj] for c in bs.F[cj]))
    if obj > lp_objective + 1e-6 * max(1.0, abs(lp_objective)):
        raise InstanceError("duplication increased the relaxation objective")
    stars = star_costs(bs, inst)
    cap = 2.0 * extended.rho * extended.est + 1e-6
    f0_rows = [inst.fac_pos[f] for f in extended.f0]
    if f0_rows:
        d_f0 = inst.metric.submatrix(
            [bs.orig[c] for c in range(bs.n_copies)], [inst.facilities[fi] for fi in f0_rows]
        ).min(axis=1)
    else:
        d_f0 = np.full(bs.n_copies, np.inf)
    for c in range(bs.n_copies):
        if d_f0[c] <= 1e-12:
            continue  # co-located with a pre-selected facility
        if stars[c] > cap:
            raise InstanceError(
                f"copy of {bs.orig[c]} has star cost {stars[c]:.6g} above the 2*rho*EST cap"
            )
