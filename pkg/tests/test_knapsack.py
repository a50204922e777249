import math

import numpy as np
import pytest

from discmed import instance as I
from discmed.fractional import duplicate_star_balanced, solve_natural, star_costs
from discmed.instance import Knapsack, discounted_cost, generate
from discmed.knapsack import (
    ExtendedInstance,
    SparsifyGuard,
    compute_Rj,
    enumerate_estimates,
    knapsack_alpha,
    knapsack_est_coefficient,
    solve_extended,
    solve_knapmeddis,
    sparsify_candidates,
    sparsify_structures,
)
from discmed.oracle import brute_opt

from .helpers import (
    assert_sparse_conditions,
    nearest_dist,
    paper_two_phase,
)


def knap_instance(seed=0, nf=3, nc=4, scale=0.4):
    return generate(nf, nc, kind="knapsack", discount_scale=scale, seed=seed)


def plain_extended(inst, est, rho=0.5, delta=2 / 3, f0=(), removed=()):
    cprime = tuple(j for j in inst.clients if j not in removed)
    return ExtendedInstance(inst, tuple(f0), cprime, rho, delta, est, 0.0)


class TestEnumerateEstimates:
    def test_zero_optimum_collapses_to_single_pair(self):
        metric = I.MetricSpace(("f00", "c00"), np.zeros((2, 2)))
        inst = I.Instance(
            ("f00",), ("c00",), metric, {"c00": 0.0}, {"c00": 1.0},
            Knapsack({"f00": 1.0}, 1.0),
        )
        assert enumerate_estimates(inst, 0.5) == [(0.0, 0.0)]

    def test_grid_shape_matches_client_count(self):
        inst = knap_instance(seed=1, nc=4)
        pairs = enumerate_estimates(inst, 1.0)
        # ceil(log2 4) = 2, so each positive c0 yields s in {0, 1, 2}
        per_c0 = {}
        for c0, est in pairs:
            per_c0.setdefault(c0, []).append(est)
        for c0, ests in per_c0.items():
            if c0 > 0:
                assert ests == pytest.approx([c0, 2 * c0, 4 * c0])

    def test_true_optimum_is_covered(self):
        for seed in range(10):
            inst = knap_instance(seed=seed)
            opt = brute_opt(inst).value
            if opt <= 0:
                continue
            eps = 0.25
            pairs = enumerate_estimates(inst, eps)
            assert any(opt - 1e-9 <= est <= (1 + eps) * opt + 1e-9 for _, est in pairs)


class TestComputeRj:
    def test_zero_budget_zero_discount_pins_zero(self):
        inst = knap_instance(seed=2, scale=0.0)  # all discounts zero
        ext = plain_extended(inst, est=0.0)
        j = inst.clients[0]
        assert compute_Rj(ext, j) == 0.0

    def test_isolated_client_closed_form(self):
        # one facility, one client: the only ball term is the client itself
        metric = I.MetricSpace(
            ("f00", "c00"), np.array([[0.0, 5.0], [5.0, 0.0]])
        )
        inst = I.Instance(
            ("f00",), ("c00",), metric, {"c00": 1.2}, {"c00": 1.0},
            Knapsack({"f00": 1.0}, 1.0),
        )
        rho, delta, est = 0.5, 2 / 3, 4.0
        ext = plain_extended(inst, est=est, rho=rho, delta=delta)
        expected = 1.2 / (1 - delta) + rho * est
        assert compute_Rj(ext, "c00") == pytest.approx(expected, rel=1e-12)

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(8)
        for seed in range(15):
            inst = knap_instance(seed=seed, nf=3, nc=6)
            est = float(rng.uniform(0.5, 30.0))
            ext = plain_extended(inst, est=est)
            delta, rho = ext.delta, ext.rho
            cols = [inst.cli_pos[j] for j in ext.cprime]
            j = inst.clients[int(rng.integers(0, len(inst.clients)))]
            cj = inst.cli_pos[j]

            def g(R):
                total = 0.0
                for col in cols:
                    if inst.dist_cc[cj, col] <= delta * R:
                        total += inst.w[col] * max(R - inst.r[col] / (1 - delta), 0.0)
                return total

            r_star = compute_Rj(ext, j)
            budget = rho * est
            cap = float(inst.metric.dist.max()) / delta + budget + 2.0
            if g(cap) <= budget:
                assert r_star >= cap - 1.0
                continue
            lo, hi = 0.0, cap
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if g(mid) <= budget:
                    lo = mid
                else:
                    hi = mid
            assert r_star == pytest.approx(lo, abs=1e-9)
            assert g(r_star) <= budget + 1e-9  # the defining inequality still holds


class TestSparsify:
    def test_zero_caps_single_instance(self):
        inst = knap_instance(seed=3)
        out = list(sparsify_candidates(inst, 0.5, 2 / 3, est=1.0, c0=1.0, caps=(0, 0)))
        assert len(out) == 1
        assert out[0].f0 == ()
        assert out[0].cprime == inst.clients

    def test_cap_total_one_counts_f0_singletons(self):
        inst = knap_instance(seed=4, nf=3)
        out = list(sparsify_candidates(inst, 0.5, 2 / 3, est=1.0, c0=1.0, caps=(1, 0)))
        assert len(out) == 4  # empty F0 plus three singletons, no removals

    def test_guard_refuses_with_count(self):
        inst = knap_instance(seed=5, nf=6, nc=8)
        with pytest.raises(SparsifyGuard, match="projected"):
            sparsify_structures(inst, 0.5, 2 / 3, max_candidates=10)

    def test_planted_sparse_instance_is_emitted_and_satisfies_conditions(self):
        # replay the two-phase construction around the brute-force optimum and
        # check the result appears in the enumeration with both conditions
        for seed in range(20):
            inst = knap_instance(seed=seed, nf=4, nc=6, scale=0.3)
            rho, delta, eps = 0.5, 2 / 3, 0.25
            opt = brute_opt(inst)
            if opt.value <= 0:
                est = 0.0
            else:
                c0_star = max(
                    inst.w[cj]
                    * max(min(inst.dist_fc[inst.fac_pos[f], cj] for f in opt.optimum)
                          - inst.r[cj], 0.0)
                    for cj in range(len(inst.clients))
                )
                s = math.ceil(math.log(opt.value / c0_star) / math.log(1 + eps)) if opt.value > c0_star else 0
                est = c0_star * (1 + eps) ** s
            f0, cprime = paper_two_phase(inst, opt.optimum, rho, delta, est)
            pairs = sparsify_structures(inst, rho, delta)
            assert (tuple(sorted(f0)), tuple(sorted(cprime))) in set(pairs), seed
            assert_sparse_conditions(inst, opt.optimum, f0, cprime, rho, delta, est)


class TestEliminationAudit:
    def test_capped_pairs_are_absent_from_the_lp(self):
        # pinned-to-zero assignment pairs must have no variable at all
        from discmed.fractional import build_natural_lp

        audited = 0
        for seed in range(8):
            inst = knap_instance(seed=seed, nf=3, nc=5)
            est = max(brute_opt(inst).value, 0.5)
            ext = plain_extended(inst, est=est)
            nat = build_natural_lp(inst, extended=ext)
            for pair in nat.eliminated:
                assert pair not in nat.x_index
            alive = len(nat.x_index)
            nf, nc = len(inst.facilities), len(ext.cprime)
            assert nat.lp.n_vars == nf + alive
            assert alive + len(nat.eliminated) == nf * nc
            audited += len(nat.eliminated)
        assert audited > 0


class TestLemma43AndDuplication:
    def test_feasibility_and_objective_bound_on_planted_instances(self):
        # the induced integral solution stays feasible, so U lower-bounds it
        for seed in range(10):
            inst = knap_instance(seed=seed, nf=3, nc=5, scale=0.3)
            rho, delta = 0.5, 2 / 3
            opt = brute_opt(inst)
            est = max(opt.value, 1e-6) * 1.1
            f0, cprime = paper_two_phase(inst, opt.optimum, rho, delta, est)
            ext = ExtendedInstance(inst, f0, cprime, rho, delta, est, 0.0)
            if sum(inst.constraint.weights[f] for f in f0) > inst.constraint.budget:
                continue
            frac = solve_natural(inst, extended=ext)
            induced = sum(
                inst.client_weights[j]
                * max(nearest_dist(inst, j, opt.optimum) - inst.discounts[j], 0.0)
                for j in ext.cprime
            )
            assert frac.objective_value <= induced + 1e-6
            removed_cost = (
                sum(
                    inst.client_weights[j]
                    * max(
                        nearest_dist(inst, j, f0) - (1 + delta) / (1 - delta) * inst.discounts[j],
                        0.0,
                    )
                    for j in set(inst.clients) - set(cprime)
                )
                if f0
                else 0.0
            )
            lhs = (1 - delta) / (1 + delta) * removed_cost + frac.objective_value
            assert lhs <= est + 1e-6

    def test_already_split_solution_is_a_noop(self):
        # x in {0, y} everywhere: no copies added, star cap inherited
        from discmed.fractional import FractionalSolution

        metric = I.MetricSpace(
            ("f00", "f01", "c00", "c01"),
            np.array(
                [
                    [0.0, 4.0, 1.0, 5.0],
                    [4.0, 0.0, 5.0, 1.0],
                    [1.0, 5.0, 0.0, 6.0],
                    [5.0, 1.0, 6.0, 0.0],
                ]
            ),
        )
        inst = I.Instance(
            ("f00", "f01"), ("c00", "c01"), metric,
            {"c00": 0.0, "c01": 0.0}, {"c00": 1.0, "c01": 1.0},
            Knapsack({"f00": 1.0, "f01": 1.0}, 2.0),
        )
        ext = plain_extended(inst, est=4.0)
        sol = FractionalSolution(
            x=np.array([[1.0, 0.0], [0.0, 1.0]]), y=np.array([1.0, 1.0]),
            objective_value=2.0,
        )
        bs = duplicate_star_balanced(sol, inst, ext)
        assert bs.n_copies == 2
        assert bs.F[0] == {0} and bs.F[1] == {1}

    def test_two_clients_sharing_a_full_facility(self):
        # both per-client terms fit the per-facility cap; combined star <= twice it
        from discmed.fractional import FractionalSolution

        metric = I.MetricSpace(
            ("f00", "c00", "c01"),
            np.array([[0.0, 2.0, 3.0], [2.0, 0.0, 5.0], [3.0, 5.0, 0.0]]),
        )
        inst = I.Instance(
            ("f00",), ("c00", "c01"), metric,
            {"c00": 0.0, "c01": 0.0}, {"c00": 1.0, "c01": 1.0},
            Knapsack({"f00": 1.0}, 1.0),
        )
        rho, est = 0.5, 6.0  # per-client terms 2 and 3, both <= rho*EST = 3
        ext = plain_extended(inst, est=est, rho=rho)
        sol = FractionalSolution(
            x=np.array([[1.0, 1.0]]), y=np.array([1.0]), objective_value=5.0
        )
        bs = duplicate_star_balanced(sol, inst, ext)
        stars = star_costs(bs, inst)
        assert float(stars.max()) == pytest.approx(5.0)
        assert float(stars.max()) <= 2 * rho * est + 1e-9

    def test_star_balanced_duplication_bounds(self):
        from discmed.lpcore import InfeasibleLP

        built = 0
        for seed in range(12):
            inst = knap_instance(seed=seed, nf=3, nc=5, scale=0.4)
            est = max(2.0 * brute_opt(inst).value, 0.5)
            ext = plain_extended(inst, est=est)
            try:
                frac = solve_natural(inst, extended=ext)
            except InfeasibleLP:
                continue  # this (F0, EST) pair is simply not the sparse one
            bs = duplicate_star_balanced(frac, inst, ext)  # raises if any bound fails
            stars = star_costs(bs, inst)
            assert float(stars.max(initial=0.0)) <= 2 * ext.rho * ext.est + 1e-6
            built += 1
        assert built >= 6


class TestSolveExtended:
    def test_unit_weight_budget_behaves_like_cardinality(self):
        inst0 = generate(4, 5, kind="cardinality", seed=6)
        weights = {f: 1.0 for f in inst0.facilities}
        inst = I.Instance(
            inst0.facilities, inst0.clients, inst0.metric, inst0.discounts,
            inst0.client_weights, Knapsack(weights, 2.0),
        )
        est = brute_opt(inst).value * 1.2 + 1.0
        cand = solve_extended(plain_extended(inst, est=est), tau=1.9)
        assert cand is not None
        assert len(cand.solution) <= 2
        assert cand.fractional_residual in (0, 1, 2)

    def test_infeasible_extended_instances_are_skipped(self):
        inst = knap_instance(seed=7)
        heavy = max(inst.constraint.weights, key=inst.constraint.weights.get)
        light_budget = inst.constraint.weights[heavy] - 1e-6
        squeezed = I.Instance(
            inst.facilities, inst.clients, inst.metric, inst.discounts,
            inst.client_weights, Knapsack(inst.constraint.weights, light_budget),
        )
        ext = plain_extended(squeezed, est=1.0, f0=(heavy,))
        assert solve_extended(ext, tau=1.9) is None

    def test_t2_resolution_opens_lighter_facility(self):
        from discmed.knapsack import _resolve_fractional
        from discmed.fractional import BallSystem

        bs = BallSystem(
            orig=["a", "b"], y=np.array([0.4, 0.6]), weight=np.array([3.0, 5.0]),
            dist=np.zeros((2, 0)), clients=(), F=[],
        )

        class _St:
            def dump(self):
                return ""

        y_star, t, closed = _resolve_fractional(np.array([0.4, 0.6]), bs, _St())
        assert t == 2
        assert list(y_star) == [1.0, 0.0]  # weight 3 opens, weight 5 closes
        assert closed == 1

    def test_empty_surviving_set_returns_the_preselection(self):
        inst = knap_instance(seed=13, nf=3, nc=4)
        w = inst.constraint.weights
        cheapest = min(inst.facilities, key=lambda f: w[f])
        ext = ExtendedInstance(
            inst, (cheapest,), (), 0.5, 2 / 3, est=1.0, c0=1.0
        )
        cand = solve_extended(ext, tau=1.9)
        assert cand is not None
        assert cand.solution == (cheapest,)
        assert cand.fractional_residual == 0

    def test_f0_always_kept_and_budget_respected(self):
        for seed in range(8):
            inst = knap_instance(seed=seed, nf=3, nc=4)
            est = max(brute_opt(inst).value, 0.5) * 1.3
            w = inst.constraint.weights
            cheapest = min(inst.facilities, key=lambda f: w[f])
            if w[cheapest] > inst.constraint.budget:
                continue
            ext = plain_extended(inst, est=est, f0=(cheapest,))
            cand = solve_extended(ext, tau=1.9)
            if cand is None:
                continue
            assert cheapest in cand.solution
            assert sum(w[f] for f in cand.solution) <= inst.constraint.budget + 1e-7
            assert all(c.holds for c in cand.certificates)

    def test_unit_volume_within_radial_bound(self):
        # every surviving client sees unit opened mass within the level radius
        from discmed.discretize import DiscretizedMetric
        from discmed.fractional import duplicate_star_balanced
        from discmed.iterround import iter_round, offset_support
        from discmed.discretize import choose_offset

        from discmed.lpcore import InfeasibleLP

        checked = 0
        for seed in range(10):
            inst = knap_instance(seed=seed, nf=3, nc=5, scale=0.3)
            est = max(2.0 * brute_opt(inst).value, 0.5)
            ext = plain_extended(inst, est=est)
            try:
                frac = solve_natural(inst, extended=ext)
            except InfeasibleLP:
                continue
            bs = duplicate_star_balanced(frac, inst, ext)
            cols = sorted(inst.cli_pos[j] for j in ext.cprime)
            c_arr, r_arr, m_arr = offset_support(bs, inst, cols)
            b, _ = choose_offset(c_arr, r_arr, m_arr, 1.9)
            dm = DiscretizedMetric(1.9, b)
            y_raw, state = iter_round(bs, inst, dm, h=1, cols=cols)
            radial = (3 * 1.9 - 1) / (1.9 - 1)
            for cj in cols:
                key = inst.clients[cj]
                radius = radial * dm.level_value(state.level[key])
                vol = sum(
                    float(y_raw[c])
                    for c in range(bs.n_copies)
                    if bs.dist[c, cj] <= radius + 1e-9
                )
                assert vol >= 1.0 - 1e-6, (seed, key)
            checked += 1
        assert checked >= 5


class TestSolveKnapMedDis:
    def test_free_colocated_facility_gives_zero(self):
        # a zero-weight facility sitting on every client at distance zero
        metric = I.MetricSpace(
            ("f00", "f01", "c00", "c01"),
            np.array(
                [
                    [0.0, 2.0, 0.0, 0.0],
                    [2.0, 0.0, 2.0, 2.0],
                    [0.0, 2.0, 0.0, 0.0],
                    [0.0, 2.0, 0.0, 0.0],
                ]
            ),
        )
        inst = I.Instance(
            ("f00", "f01"), ("c00", "c01"), metric,
            {"c00": 0.0, "c01": 0.0}, {"c00": 1.0, "c01": 1.0},
            Knapsack({"f00": 1.0, "f01": 1.0}, 1.5),
        )
        rep = solve_knapmeddis(inst, tau=1.9, rho=0.5, epsilon=0.5)
        assert rep.objective == 0.0

    def test_alpha_formula_at_19(self):
        assert knapsack_alpha(1.9) == pytest.approx(3 * 1.9 * (3 * 1.9 - 1) / 0.9 + 2)
        assert knapsack_alpha(1.9) == pytest.approx(31.767, abs=1e-3)

    def test_est_coefficient_formula(self):
        sigma = 1.9 * (3 * 1.9 - 1) / 0.9
        expected = max(5.0, (3 * 1.9 - 1) / math.log(1.9)) + 0.5 * (7 * sigma + 14 / 3)
        assert knapsack_est_coefficient(1.9, 0.5) == pytest.approx(expected)

    def test_structural_invariants_and_oracle_bound(self):
        for seed in (0, 7):
            inst = knap_instance(seed=seed, nf=3, nc=4, scale=0.4)
            rep = solve_knapmeddis(inst, tau=1.9, rho=0.5, delta=2 / 3, epsilon=0.25)
            assert rep.all_hold
            w = inst.constraint.weights
            assert sum(w[f] for f in rep.solution) <= inst.constraint.budget + 1e-7
            opt = brute_opt(inst)
            bound = rep.extras["estCoefficient"] * 1.25 * opt.value
            assert discounted_cost(inst, rep.solution, rep.alpha) <= bound + 1e-6

    def test_parallel_jobs_match_sequential(self):
        inst = knap_instance(seed=11, nf=3, nc=3, scale=0.3)
        seq = solve_knapmeddis(inst, tau=1.9, rho=0.5, epsilon=0.5)
        par = solve_knapmeddis(inst, tau=1.9, rho=0.5, epsilon=0.5, jobs=2)
        assert seq.solution == par.solution
        assert seq.objective == pytest.approx(par.objective)

    def test_caps_below_theoretical_flagged(self):
        inst = knap_instance(seed=12, nf=3, nc=3)
        rep = solve_knapmeddis(inst, tau=1.9, rho=0.5, epsilon=0.5, caps=(1, 1))
        assert rep.extras["capsBelowTheoretical"]
        rep2 = solve_knapmeddis(inst, tau=1.9, rho=0.5, epsilon=0.5)
        assert not rep2.extras["capsBelowTheoretical"]
