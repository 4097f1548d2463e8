"""Solver correctness against independent enumeration oracles.

Exact-equality checks follow one rule: the oracle computes every candidate
value with math.fsum, and the solver's returned policy is re-evaluated the
same way.  Two exactly rounded sums of the same reals are the same double,
so == is safe wherever the solver is exhaustive.
"""

import numpy as np
import pytest

from policyboot.data import ScoreTable
from policyboot.errors import SolverError
from policyboot.policies import (
    FiniteClass,
    Leaf,
    LinearClass,
    LinearRule,
    PolicyClassSpec,
    Split,
    TreeClass,
    TreeRule,
    assign_all,
    never_treat,
    serialize_policy,
    treat_all,
    weighted_welfare,
)
from policyboot.solvers import solve_class, solve_linear, solve_tree

from conftest import make_binary_table
from oracles import (
    brute_force_1d,
    enumerate_finite,
    fsum_value,
    naive_tree_search,
    policy_value,
    random_binary_table,
)


def lin1d(**kw):
    return PolicyClassSpec(kind=LinearClass(dims=(0,)), **kw)


def three_arm_table(rng, n):
    # one observed arm per row, contrasts taken against arm 0
    z = np.zeros((n, 3))
    arms = rng.integers(0, 3, size=n)
    z[np.arange(n), arms] = rng.standard_normal(n)
    g = z - z[:, :1]
    g[:, 0] = 0.0
    x = np.round(rng.random((n, 2)), 3)
    return ScoreTable(z=z, g=g, x=x)


class TestLinear1d:
    def test_toy_optimum(self, toy_table, uniform3):
        res = solve_linear(toy_table, uniform3, lin1d())
        assert res.exact
        assert abs(res.value - 2.0) < 1e-12
        p = res.policy
        assert isinstance(p, LinearRule)
        # the optimal rule treats only the x = 0.9 row
        assert list(assign_all(p, toy_table.x)) == [0, 0, 1]

    def test_all_positive_treats_everyone(self):
        tbl = make_binary_table([1.0, 2.0, 0.5, 3.0], [[0.0], [1.0], [2.0], [3.0]])
        w = np.full(4, 0.25)
        res = solve_linear(tbl, w, lin1d())
        assert np.all(assign_all(res.policy, tbl.x) == 1)
        assert res.value == fsum_value(w, tbl.g, np.ones(4, dtype=int))

    def test_all_negative_never_treats(self):
        tbl = make_binary_table([-1.0, -0.1, -5.0], [[0.0], [1.0], [2.0]])
        w = np.full(3, 1 / 3)
        res = solve_linear(tbl, w, lin1d())
        assert res.value == 0.0
        assert np.all(assign_all(res.policy, tbl.x) == 0)
        assert float(res.shares[1]) == 0.0

    def test_zero_scores_break_tie_to_never_treat(self):
        tbl = make_binary_table([0.0, 0.0], [[0.0], [1.0]])
        w = np.array([0.5, 0.5])
        res = solve_linear(tbl, w, lin1d())
        assert res.value == 0.0
        assert np.all(assign_all(res.policy, tbl.x) == 0)

    @pytest.mark.parametrize("integer_scores", [False, True])
    def test_matches_brute_force(self, integer_scores):
        rng = np.random.default_rng(90210 + integer_scores)
        for _ in range(40):
            n = int(rng.integers(1, 12))
            g1, x, w = random_binary_table(rng, n, d=1, integer_scores=integer_scores)
            tbl = make_binary_table(g1, x)
            res = solve_linear(tbl, w, lin1d())
            best, _ = brute_force_1d(g1, x[:, 0], w)
            got = policy_value(w, tbl.g, x, res.policy)
            assert got == best

    def test_capacity_top_two(self):
        tbl = make_binary_table(
            [-1.0, 2.0, 3.0, 5.0], [[1.0], [2.0], [3.0], [4.0]]
        )
        w = np.full(4, 0.25)
        spec = lin1d(capacity=0.5, capacity_basis="uniform-share")
        res = solve_linear(tbl, w, spec)
        assert abs(res.value - 2.0) < 1e-12
        assert list(assign_all(res.policy, tbl.x)) == [0, 0, 1, 1]
        assert abs(float(res.shares[1]) - 0.5) < 1e-12

    def test_capacity_monotone_in_q(self):
        rng = np.random.default_rng(5)
        g1, x, _ = random_binary_table(rng, 9, d=1)
        tbl = make_binary_table(g1, x)
        w = np.full(9, 1 / 9)
        vals = [
            solve_linear(tbl, w, lin1d(capacity=q)).value
            for q in (0.25, 0.5, 0.75, 1.0)
        ]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
        free = solve_linear(tbl, w, lin1d()).value
        assert abs(vals[-1] - free) < 1e-12


class TestLinearHigherDim:
    def test_pair_search_recovers_separable_optimum(self):
        # positives strictly above the line x1 + x2 = 1, margin keeps the
        # boundary unambiguous
        x = np.array(
            [[0.9, 0.9], [0.7, 0.8], [1.2, 0.3], [0.1, 0.2], [0.3, 0.1], [0.4, 0.4]]
        )
        g1 = np.array([2.0, 1.0, 0.5, -1.0, -2.0, -0.5])
        tbl = make_binary_table(g1, x)
        w = np.full(6, 1 / 6)
        res = solve_linear(tbl, w, PolicyClassSpec(kind=LinearClass()))
        assert res.exact
        want = fsum_value(w, tbl.g, (g1 > 0).astype(int))
        got = policy_value(w, tbl.g, x, res.policy)
        assert got == want

    def test_pair_search_beats_random_rules(self):
        rng = np.random.default_rng(17)
        g1, x, _ = random_binary_table(rng, 14, d=2)
        tbl = make_binary_table(g1, x)
        w = np.full(14, 1 / 14)
        res = solve_linear(tbl, w, PolicyClassSpec(kind=LinearClass()))
        for _ in range(1000):
            beta = rng.standard_normal(2)
            c = float(rng.standard_normal())
            cand = fsum_value(w, tbl.g, (x @ beta >= c).astype(int))
            assert cand <= res.value + 1e-12

    def test_local_search_flagged_inexact(self):
        rng = np.random.default_rng(23)
        n = 30
        x = rng.standard_normal((n, 3))
        planted = x @ np.array([1.0, -0.5, 0.25]) >= 0.2
        g1 = np.where(planted, 1.0, -1.0) + 0.01 * rng.standard_normal(n)
        tbl = make_binary_table(g1, x)
        w = np.full(n, 1 / n)
        res = solve_linear(tbl, w, PolicyClassSpec(kind=LinearClass()))
        assert not res.exact
        planted_value = fsum_value(w, tbl.g, planted.astype(int))
        assert res.value >= planted_value - 1e-9

    def test_small_n_exact_threshold_routes_to_local(self):
        rng = np.random.default_rng(29)
        g1, x, _ = random_binary_table(rng, 9, d=2)
        tbl = make_binary_table(g1, x)
        w = np.full(9, 1 / 9)
        spec = PolicyClassSpec(kind=LinearClass(n_exact=4))
        res = solve_linear(tbl, w, spec)
        assert not res.exact

    def test_multiarm_rejected(self):
        tbl = ScoreTable(
            z=np.zeros((2, 3)), g=np.zeros((2, 3)), x=np.zeros((2, 1))
        )
        with pytest.raises(SolverError):
            solve_linear(tbl, np.array([0.5, 0.5]), lin1d())


class TestTree:
    def grid_spec(self, grids, depth=2, **kw):
        return PolicyClassSpec(
            kind=TreeClass(max_depth=depth, split_grid=grids), **kw
        )

    def test_toy_grid_examples(self, toy_table, uniform3):
        res = solve_tree(toy_table, uniform3, self.grid_spec({0: (0.4,)}, depth=1))
        assert abs(res.value - 4.0 / 3.0) < 1e-12
        res = solve_tree(
            toy_table, uniform3, self.grid_spec({0: (0.4, 0.7)}, depth=1)
        )
        assert abs(res.value - 2.0) < 1e-12
        res = solve_tree(
            toy_table, uniform3, self.grid_spec({0: (0.4, 0.7)}, depth=2)
        )
        assert abs(res.value - 8.0 / 3.0) < 1e-12
        assert list(assign_all(res.policy, toy_table.x)) == [1, 0, 1]

    def test_depth_zero_picks_best_arm(self):
        # every row observed under arm 2 with score 2: the constant arm-2
        # rule is worth 2, everything else 0
        z = np.zeros((4, 3))
        z[:, 2] = 2.0
        tbl = ScoreTable(z=z, g=z.copy(), x=np.zeros((4, 1)))
        w = np.full(4, 0.25)
        res = solve_tree(tbl, w, self.grid_spec({0: ()}, depth=0))
        assert abs(res.value - 2.0) < 1e-12
        assert np.all(assign_all(res.policy, tbl.x) == 2)

    @pytest.mark.parametrize("integer_scores", [False, True])
    def test_matches_naive_enumeration_binary(self, integer_scores):
        rng = np.random.default_rng(7_001 + integer_scores)
        for _ in range(25):
            n = int(rng.integers(2, 9))
            g1, x, w = random_binary_table(rng, n, d=2, integer_scores=integer_scores)
            tbl = make_binary_table(g1, x)
            grids = {
                0: tuple(sorted(rng.uniform(-2, 2, size=int(rng.integers(1, 4))))),
                1: tuple(sorted(rng.uniform(-2, 2, size=int(rng.integers(1, 4))))),
            }
            res = solve_tree(tbl, w, self.grid_spec(grids))
            best, _ = naive_tree_search(tbl.g, x, grids, 2, w)
            got = policy_value(w, tbl.g, x, res.policy)
            assert got == best

    def test_matches_naive_enumeration_three_arms(self):
        rng = np.random.default_rng(7_020)
        for _ in range(15):
            n = int(rng.integers(2, 8))
            tbl = three_arm_table(rng, n)
            raw = rng.random(n) + 0.05
            w = raw / raw.sum()
            grids = {0: (0.25, 0.75), 1: (0.5,)}
            res = solve_tree(tbl, w, self.grid_spec(grids))
            best, _ = naive_tree_search(tbl.g, tbl.x, grids, 2, w)
            got = policy_value(w, tbl.g, tbl.x, res.policy)
            assert got == best

    def test_matches_naive_under_capacity(self):
        rng = np.random.default_rng(4444)
        for _ in range(20):
            n = int(rng.integers(3, 9))
            g1, x, _ = random_binary_table(rng, n, d=2)
            tbl = make_binary_table(g1, x)
            w = np.full(n, 1.0 / n)
            grids = {0: (0.25, 0.75), 1: (0.5,)}
            q = float(rng.uniform(0.21, 0.93))
            spec = self.grid_spec(grids, capacity=q, capacity_basis="uniform-share")
            res = solve_tree(tbl, w, spec)
            best, feasible = naive_tree_search(
                tbl.g, x, grids, 2, w, capacity=q, capacity_weights=w
            )
            assert feasible > 0
            got = policy_value(w, tbl.g, x, res.policy)
            assert got == best

    def test_dominance_in_depth_and_grid(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            g1, x, w = random_binary_table(rng, 10, d=2)
            tbl = make_binary_table(g1, x)
            small = {0: (0.5,), 1: (0.5,)}
            big = {0: (0.25, 0.5, 0.75), 1: (0.3, 0.5)}
            v = {
                (d, key): solve_tree(tbl, w, self.grid_spec(g, depth=d)).value
                for d in (0, 1, 2)
                for key, g in (("small", small), ("big", big))
            }
            for key in ("small", "big"):
                assert v[(0, key)] <= v[(1, key)] + 1e-12
                assert v[(1, key)] <= v[(2, key)] + 1e-12
            for d in (0, 1, 2):
                assert v[(d, "small")] <= v[(d, "big")] + 1e-12

    def test_default_grid_uses_distinct_values_when_few(self):
        x = np.array([[0.0], [1.0], [1.0], [2.0]])
        tbl = make_binary_table([1.0, -1.0, -1.0, 1.0], x)
        w = np.full(4, 0.25)
        spec = PolicyClassSpec(kind=TreeClass(max_depth=2, grid_size=8))
        res = solve_tree(tbl, w, spec)
        # treat {x <= 0} and {x > 1}: every distinct value is a threshold
        assert abs(res.value - 0.5) < 1e-12

    def test_zero_scores_tie_to_never_treat(self, uniform3):
        tbl = make_binary_table([0.0, 0.0, 0.0], [[0.1], [0.5], [0.9]])
        res = solve_tree(tbl, uniform3, self.grid_spec({0: (0.4,)}))
        assert serialize_policy(res.policy) == '{"arm":0}'


class TestFinite:
    def test_picks_best_member(self, toy_table, uniform3):
        members = (
            never_treat(),
            treat_all(),
            LinearRule(beta=(1.0,), c=0.6),
            TreeRule(Split(axis=0, threshold=0.3, left=Leaf(1), right=Leaf(0))),
        )
        spec = PolicyClassSpec(kind=FiniteClass(policies=members))
        res = solve_class(toy_table, uniform3, spec)
        best = enumerate_finite(members, toy_table.g, toy_table.x, uniform3)
        got = policy_value(uniform3, toy_table.g, toy_table.x, res.policy)
        assert got == best
        assert abs(res.value - 2.0) < 1e-12

    def test_certificate_against_thousand_members(self):
        rng = np.random.default_rng(333)
        g1, x, w = random_binary_table(rng, 15, d=2)
        tbl = make_binary_table(g1, x)
        members = tuple(
            LinearRule(
                beta=tuple(rng.standard_normal(2)), c=float(rng.standard_normal())
            )
            for _ in range(1000)
        )
        spec = PolicyClassSpec(kind=FiniteClass(policies=members))
        res = solve_class(tbl, w, spec)
        best = enumerate_finite(members, tbl.g, x, w)
        got = policy_value(w, tbl.g, x, res.policy)
        assert got == best
        assert res.candidates_evaluated == 1000

    def test_capacity_filters_members(self, toy_table, uniform3):
        members = (never_treat(), treat_all(), LinearRule(beta=(1.0,), c=0.6))
        spec = PolicyClassSpec(
            kind=FiniteClass(policies=members),
            capacity=0.4,
            capacity_basis="uniform-share",
        )
        res = solve_class(toy_table, uniform3, spec)
        # treat-all is infeasible at q = 0.4; the c = 0.6 rule treats one of
        # three rows
        assert abs(res.value - 2.0) < 1e-12
        assert list(assign_all(res.policy, toy_table.x)) == [0, 0, 1]

    def test_all_members_infeasible_falls_back_to_never_treat(
        self, toy_table, uniform3
    ):
        spec = PolicyClassSpec(
            kind=FiniteClass(policies=(treat_all(),)),
            capacity=0.2,
            capacity_basis="uniform-share",
        )
        res = solve_class(toy_table, uniform3, spec)
        assert res.value == 0.0
        assert np.all(assign_all(res.policy, toy_table.x) == 0)


class TestDispatchAndResult:
    def test_solve_class_dispatches(self, toy_table, uniform3):
        a = solve_class(toy_table, uniform3, lin1d())
        b = solve_linear(toy_table, uniform3, lin1d())
        assert serialize_policy(a.policy) == serialize_policy(b.policy)

    def test_value_consistent_with_policy(self, toy_table, uniform3):
        res = solve_class(toy_table, uniform3, lin1d())
        direct = weighted_welfare(toy_table, uniform3, res.policy)
        assert abs(res.value - direct) < 1e-12

    def test_result_serializes(self, toy_table, uniform3):
        d = solve_class(toy_table, uniform3, lin1d()).to_dict()
        assert set(d) == {"policy", "value", "shares", "exact", "candidates_evaluated"}
        assert isinstance(d["shares"], list)
