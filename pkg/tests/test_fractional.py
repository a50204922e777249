import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discmed import instance as I
from discmed.fractional import (
    FractionalSolution,
    build_natural_lp,
    duplicate_facilities,
    make_distance_optimal,
    solve_natural,
)


def two_facility_instance(d1=1.0, d2=2.0, k=1):
    metric = I.MetricSpace(
        ("f00", "f01", "c00"),
        np.array([[0.0, d1 + d2, d1], [d1 + d2, 0.0, d2], [d1, d2, 0.0]]),
    )
    return I.Instance(
        ("f00", "f01"), ("c00",), metric, {"c00": 0.0}, {"c00": 1.0}, I.Cardinality(k)
    )


class TestBuildNaturalLP:
    def test_kmedian_shape(self):
        inst = two_facility_instance(k=1)
        nat = build_natural_lp(inst)
        assert nat.lp.n_vars == 4  # 2 openings + 2 assignments
        # one assignment row, one cardinality row, two coupling rows
        assert nat.lp.n_rows == 4
        rels = nat.lp.row_rel
        assert rels.count("=") == 1 and rels.count("<=") == 3

    def test_partition_matroid_compact_rows(self):
        inst = I.generate(3, 2, kind="cardinality", seed=0)
        spec = I.PartitionMatroid((("f00", "f01"), ("f02",)), (1, 1))
        inst = I.Instance(
            inst.facilities, inst.clients, inst.metric,
            inst.discounts, inst.client_weights, I.Matroid(spec),
        )
        nat = build_natural_lp(inst)
        # rows: 2 assignment + 2 part rows + 6 coupling; no per-element rows
        assert nat.lp.n_rows == 2 + 2 + 6

    def test_lp_value_lower_bounds_integral_optimum(self):
        from discmed.oracle import brute_opt

        for seed in range(10):
            inst = I.generate(5, 6, kind="cardinality", seed=seed)
            frac = solve_natural(inst)
            assert frac.objective_value <= brute_opt(inst).value + 1e-6


class TestDistanceOptimal:
    def test_water_fill_example(self):
        inst = two_facility_instance(d1=1.0, d2=2.0)
        sol = FractionalSolution(
            x=np.array([[0.4], [0.6]]), y=np.array([0.5, 0.5]), objective_value=0.0
        )
        out = make_distance_optimal(sol, inst)
        assert np.allclose(out.x[:, 0], [0.5, 0.5])
        assert np.allclose(out.y, sol.y)

    def test_idempotent(self):
        for seed in range(10):
            inst = I.generate(5, 6, kind="cardinality", seed=seed)
            one = make_distance_optimal(solve_natural(inst), inst)
            two = make_distance_optimal(one, inst)
            assert np.allclose(one.x, two.x, atol=1e-12)

    def test_closer_facilities_saturated(self):
        for seed in range(10):
            inst = I.generate(5, 6, kind="cardinality", seed=seed)
            out = make_distance_optimal(solve_natural(inst), inst)
            for cj in range(len(inst.clients)):
                used = np.nonzero(out.x[:, cj] > 1e-9)[0]
                if used.size == 0:
                    continue
                worst = max(inst.dist_fc[fi, cj] for fi in used)
                for fi in range(len(inst.facilities)):
                    if inst.dist_fc[fi, cj] < worst - 1e-12:
                        assert out.x[fi, cj] >= min(out.y[fi], 1.0) - 1e-7

    @given(
        dists=st.lists(st.floats(min_value=1.0, max_value=50.0), min_size=2, max_size=6),
        openings=st.data(),
    )
    @settings(max_examples=120, deadline=None)
    def test_water_fill_invariants(self, dists, openings):
        # one client, arbitrary facility distances and openings with mass >= 1
        nf = len(dists)
        y = np.array(
            openings.draw(
                st.lists(
                    st.floats(min_value=0.0, max_value=1.0), min_size=nf, max_size=nf
                )
            )
        )
        if y.sum() < 1.0:
            y = np.minimum(1.0, y + (1.0 - y.sum()) / nf + 1e-9)
        ids = tuple(f"f{k:02d}" for k in range(nf)) + ("c00",)
        n = nf + 1
        mat = np.zeros((n, n))
        for a in range(nf):
            mat[a, nf] = mat[nf, a] = dists[a]
            for b in range(nf):
                if a != b:
                    mat[a, b] = min(dists[a] + dists[b], 50.0) + 1.0
        inst = I.Instance(
            ids[:-1], ("c00",), I.MetricSpace(ids, mat),
            {"c00": 0.0}, {"c00": 1.0}, I.Cardinality(nf),
        )
        start = np.zeros((nf, 1))
        rem = 1.0
        for fi in range(nf - 1, -1, -1):  # deliberately fill far-first
            take = min(float(y[fi]), rem)
            start[fi, 0] = take
            rem -= take
        sol = FractionalSolution(x=start, y=y, objective_value=0.0)
        out = make_distance_optimal(sol, inst)
        assert out.x[:, 0].sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(out.x[:, 0] <= y + 1e-12)
        used = np.nonzero(out.x[:, 0] > 1e-9)[0]
        worst = max(inst.dist_fc[fi, 0] for fi in used)
        for fi in range(nf):
            if inst.dist_fc[fi, 0] < worst - 1e-12:
                assert out.x[fi, 0] == pytest.approx(float(y[fi]), abs=1e-9)
        assert out.objective_value <= (
            float((np.maximum(inst.dist_fc[:, :1] - 0.0, 0.0) * start).sum()) + 1e-9
        )

    def test_objective_never_increases_on_random_feasible(self):
        rng = np.random.default_rng(17)
        checked = 0
        for seed in range(100):
            inst = I.generate(5, 5, kind="cardinality", seed=seed)
            k = inst.constraint.k
            nf, nc = len(inst.facilities), len(inst.clients)
            y = rng.uniform(0.0, 1.0, nf)
            total = y.sum()
            if total > k:
                y *= k / total
            if y.sum() < 1.0:
                y = np.minimum(1.0, y + (1.05 - y.sum()) / nf)
            if y.sum() < 1.0 or y.sum() > k + 1e-9:
                continue
            x = np.zeros((nf, nc))
            for cj in range(nc):
                order = rng.permutation(nf)
                rem = 1.0
                for fi in order:
                    take = min(y[fi], rem)
                    x[fi, cj] = take
                    rem -= take
                assert rem <= 1e-9
            contrib = np.maximum(inst.dist_fc - inst.r[None, :], 0.0) * inst.w[None, :]
            sol = FractionalSolution(x=x, y=y, objective_value=float((contrib * x).sum()))
            out = make_distance_optimal(sol, inst)
            assert out.objective_value <= sol.objective_value + 1e-9
            checked += 1
        assert checked >= 90


class TestDuplicateFacilities:
    def test_integral_input_no_split(self):
        inst = two_facility_instance(k=2)
        sol = FractionalSolution(
            x=np.array([[1.0], [0.0]]), y=np.array([1.0, 1.0]), objective_value=1.0
        )
        bs = duplicate_facilities(sol, inst)
        assert bs.F[0] == {0}
        assert bs.orig[0] == "f00"

    def test_single_forced_split(self):
        inst = two_facility_instance(k=1)
        sol = FractionalSolution(
            x=np.array([[0.3], [0.7]]), y=np.array([0.7, 0.7]), objective_value=0.0
        )
        bs = duplicate_facilities(sol, inst)
        f00_copies = bs.copies_of("f00")
        masses = sorted(float(bs.y[c]) for c in f00_copies)
        assert masses == pytest.approx([0.3, 0.4])
        in_ball = [c for c in f00_copies if c in bs.F[0]]
        assert [float(bs.y[c]) for c in in_ball] == pytest.approx([0.3])

    def test_mass_preserved_and_unit_balls(self):
        for seed in range(25):
            inst = I.generate(6, 7, kind="cardinality", seed=seed)
            sol = make_distance_optimal(solve_natural(inst), inst)
            bs = duplicate_facilities(sol, inst)
            for fi, f in enumerate(inst.facilities):
                copies = bs.copies_of(f)
                assert sum(float(bs.y[c]) for c in copies) == pytest.approx(
                    float(sol.y[fi]), abs=1e-9
                )
            for cj in range(len(inst.clients)):
                assert bs.ball_mass(cj) == pytest.approx(1.0, abs=1e-9)
                # per original facility, ball copies carry exactly x_ij
                per = {}
                for c in bs.F[cj]:
                    per[bs.orig[c]] = per.get(bs.orig[c], 0.0) + float(bs.y[c])
                for f, mass in per.items():
                    assert mass == pytest.approx(float(sol.x[inst.fac_pos[f], cj]), abs=1e-7)
