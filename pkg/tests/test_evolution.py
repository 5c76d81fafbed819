import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmsaea.benchmarks import Problem, make_classical
from llmsaea.evolution import (
    DEConfig,
    EvaluatedSolution,
    Population,
    bounding_box,
    de_offspring,
    latin_hypercube,
    local_search_de,
    repair,
)


def box_problem(lower, upper, dim=None):
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if dim is not None and lower.size == 1:
        lower = np.full(dim, lower[0])
        upper = np.full(dim, upper[0])
    return Problem("box", lower.size, lower, upper, lambda x: float(np.sum(x * x)))


def make_population(vectors, values):
    members = [
        EvaluatedSolution(np.asarray(x, dtype=float), float(v), i)
        for i, (x, v) in enumerate(zip(vectors, values))
    ]
    return Population(members)


class TestPopulation:
    def test_sorted_best_first_with_stable_ties(self):
        pop = make_population([[0.0], [1.0], [2.0], [3.0]], [5.0, 1.0, 5.0, 1.0])
        assert [m.index for m in pop] == [1, 3, 0, 2]
        assert pop.best.index == 1

    def test_capacity_truncates_after_sorting(self):
        pop = make_population([[0.0], [1.0], [2.0]], [3.0, 1.0, 2.0])
        top2 = Population(list(pop), capacity=2)
        assert [m.value for m in top2] == [1.0, 2.0]

    def test_vectors_and_values_follow_sort_order(self):
        pop = make_population([[9.0], [4.0]], [2.0, 1.0])
        assert np.array_equal(pop.vectors(), [[4.0], [9.0]])
        assert np.array_equal(pop.values(), [1.0, 2.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Population([])


class TestDEConfig:
    def test_defaults(self):
        cfg = DEConfig()
        assert cfg.scale_factor == 0.5 and cfg.crossover_rate == 0.9

    @pytest.mark.parametrize("f,cr", [(0.0, 0.9), (1.5, 0.9), (0.5, -0.1), (0.5, 1.1)])
    def test_invalid_parameters(self, f, cr):
        with pytest.raises(ValueError):
            DEConfig(scale_factor=f, crossover_rate=cr)


class TestLatinHypercube:
    def test_two_points_split_the_unit_interval(self):
        p = box_problem(0.0, 1.0)
        pts = latin_hypercube(2, p, seed=7).ravel()
        assert ((pts < 0.5).sum(), (pts >= 0.5).sum()) == (1, 1)

    def test_each_stratum_occupied_once(self):
        p = box_problem(-2.0, 4.0, dim=3)
        n = 5
        pts = latin_hypercube(n, p, seed=11)
        for j in range(3):
            strata = np.floor((pts[:, j] - p.lower[j]) / (p.upper[j] - p.lower[j]) * n)
            assert sorted(strata) == list(range(n))

    def test_deterministic(self):
        p = box_problem(0.0, 1.0, dim=4)
        assert np.array_equal(latin_hypercube(6, p, 3), latin_hypercube(6, p, 3))

    def test_matches_documented_construction(self):
        p = box_problem(-1.0, 3.0, dim=2)
        n = 8
        pts = latin_hypercube(n, p, seed=42)
        ref_rng = np.random.default_rng(42)
        expected = np.empty((n, 2))
        for j in range(2):
            perm = ref_rng.permutation(n)
            jitter = ref_rng.random(n)
            expected[:, j] = -1.0 + (perm + jitter) / n * 4.0
        assert np.array_equal(pts, expected)

    def test_rejects_nonpositive_count(self):
        with pytest.raises(ValueError):
            latin_hypercube(0, box_problem(0.0, 1.0), seed=0)


class TestRepair:
    def test_in_bounds_identity(self, rng):
        assert repair(0.3, 0.0, 1.0, rng) == 0.3

    def test_out_of_bounds_lands_inside(self, rng):
        for v in (1.7, -0.4, 100.0):
            r = repair(v, 0.0, 1.0, rng)
            assert 0.0 <= r < 1.0

    def test_uniform_mean(self, rng):
        draws = np.array([repair(2.0, 0.0, 1.0, rng) for _ in range(10_000)])
        assert abs(draws.mean() - 0.5) < 0.05


class TestDEOffspring:
    def test_mutant_arithmetic_with_forced_crossover(self):
        # best [1,1]; r1, r2 are the other two in either order
        pop = make_population([[1.0, 1.0], [2.0, 0.0], [0.0, 2.0]], [0.0, 1.0, 2.0])
        p = box_problem(-10.0, 10.0, dim=2)
        cfg = DEConfig(scale_factor=0.5, crossover_rate=1.0)
        off = de_offspring(pop, cfg, p, np.random.default_rng(0))
        assert any(
            np.array_equal(off[0], m) for m in ([2.0, 0.0], [0.0, 2.0])
        )

    def test_cr_one_trial_equals_mutant(self):
        pop = make_population(
            [[0.1, 0.2, 0.3], [0.5, 0.1, 0.9], [0.9, 0.8, 0.2], [0.3, 0.6, 0.4]],
            [1.0, 2.0, 3.0, 4.0],
        )
        p = box_problem(-10.0, 10.0, dim=3)
        seed = 5
        off = de_offspring(pop, DEConfig(crossover_rate=1.0), p, np.random.default_rng(seed))
        # replay: with CR=1 the trial is exactly the mutant (box is wide)
        ref = np.random.default_rng(seed)
        vecs = pop.vectors()
        idx = np.arange(4)
        for i in range(4):
            r1, r2 = ref.choice(np.delete(idx, i), size=2, replace=False)
            mutant = vecs[0] + 0.5 * (vecs[r1] - vecs[r2])
            ref.integers(3)
            ref.random(3)
            assert np.array_equal(off[i], mutant)

    def test_cr_zero_changes_exactly_one_coordinate(self):
        vectors = np.arange(12.0).reshape(4, 3)
        pop = make_population(vectors, [0.0, 1.0, 2.0, 3.0])
        p = box_problem(-100.0, 100.0, dim=3)
        off = de_offspring(pop, DEConfig(crossover_rate=0.0), p, np.random.default_rng(1))
        sorted_vecs = pop.vectors()
        diffs = (off != sorted_vecs).sum(axis=1)
        assert np.all(diffs == 1)

    def test_replay_oracle_with_repairs(self):
        # narrow box forces repairs; replay the full documented draw order
        vecs = [[0.0, 0.9], [0.95, 0.1], [0.2, 0.85], [0.7, 0.3], [0.45, 0.5]]
        pop = make_population(vecs, [3.0, 1.0, 4.0, 2.0, 5.0])
        p = box_problem(0.0, 1.0, dim=2)
        cfg = DEConfig(scale_factor=0.9, crossover_rate=0.6)
        seed = 99
        off = de_offspring(pop, cfg, p, np.random.default_rng(seed))

        ref = np.random.default_rng(seed)
        sorted_vecs = pop.vectors()
        best = sorted_vecs[0]
        idx = np.arange(5)
        expected = np.empty_like(sorted_vecs)
        for i in range(5):
            r1, r2 = ref.choice(np.delete(idx, i), size=2, replace=False)
            mutant = best + 0.9 * (sorted_vecs[r1] - sorted_vecs[r2])
            j_rand = int(ref.integers(2))
            take = ref.random(2) < 0.6
            take[j_rand] = True
            trial = np.where(take, mutant, sorted_vecs[i])
            for j in range(2):
                if not 0.0 <= trial[j] <= 1.0:
                    trial[j] = ref.random()
            expected[i] = trial
        assert np.array_equal(off, expected)

    def test_small_population_rejected(self):
        pop = make_population([[0.0], [1.0]], [0.0, 1.0])
        with pytest.raises(ValueError):
            de_offspring(pop, DEConfig(), box_problem(0.0, 1.0), np.random.default_rng(0))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(3, 12))
    def test_offspring_in_box_and_full_length(self, seed, n):
        gen = np.random.default_rng(seed)
        p = box_problem(-2.0, 2.0, dim=3)
        vecs = gen.uniform(-2.0, 2.0, size=(n, 3))
        pop = make_population(vecs, gen.random(n))
        off = de_offspring(pop, DEConfig(), p, gen)
        assert off.shape == (n, 3)
        assert np.all(off >= -2.0) and np.all(off <= 2.0)


class TestBoundingBox:
    def test_single_member(self):
        pop = make_population([[1.0, -2.0]], [0.0])
        lb, ub = bounding_box(pop)
        assert np.array_equal(lb, [1.0, -2.0]) and np.array_equal(ub, [1.0, -2.0])

    def test_hand_example(self):
        pop = make_population([[0.0, 2.0], [1.0, 1.0]], [0.0, 1.0])
        lb, ub = bounding_box(pop)
        assert np.array_equal(lb, [0.0, 1.0]) and np.array_equal(ub, [1.0, 2.0])

    def test_matches_scalar_scan(self, rng):
        vecs = rng.normal(size=(20, 4))
        pop = make_population(vecs, rng.random(20))
        lb, ub = bounding_box(pop)
        member_vecs = pop.vectors()
        for j in range(4):
            assert lb[j] == min(v[j] for v in member_vecs)
            assert ub[j] == max(v[j] for v in member_vecs)


class TestLocalSearchDE:
    def test_budget_equal_to_pop_size_returns_initial_best(self):
        lb, ub = np.full(3, -1.0), np.full(3, 1.0)
        f = lambda X: np.sum(X**2, axis=1)
        result = local_search_de(f, lb, ub, pop_size=10, budget=10, seed=21)
        ref = np.random.default_rng(21)
        init = lb + ref.random((10, 3)) * (ub - lb)
        assert np.array_equal(result, init[np.argmin(f(init))])

    def test_minimizes_convex_quadratic(self):
        lb, ub = np.full(5, -1.0), np.full(5, 1.0)
        f = lambda X: np.sum(X**2, axis=1)
        result = local_search_de(f, lb, ub, pop_size=20, budget=1500, seed=3)
        assert float(np.sum(result**2)) <= 1e-3

    def test_budget_is_respected_exactly(self):
        rows = []
        def counting(X):
            rows.append(len(X))
            return np.sum(X**2, axis=1)

        local_search_de(counting, np.zeros(2), np.ones(2), pop_size=7, budget=40, seed=1)
        assert sum(rows) == 40
        assert max(rows) <= 7

    def test_collapsed_region_returns_the_point(self):
        p = np.array([0.25, -0.5])
        result = local_search_de(
            lambda X: np.zeros(len(X)), p, p, pop_size=5, budget=20, seed=0
        )
        assert np.array_equal(result, p)

    def test_partially_collapsed_dimension_stays_fixed(self):
        lb = np.array([0.0, 0.7])
        ub = np.array([1.0, 0.7])
        result = local_search_de(
            lambda X: X[:, 0] ** 2, lb, ub, pop_size=6, budget=100, seed=4
        )
        assert result[1] == 0.7
        assert 0.0 <= result[0] <= 1.0

    def test_result_stays_inside_region(self, rng):
        lb = rng.uniform(-2.0, 0.0, size=4)
        ub = lb + rng.uniform(0.5, 2.0, size=4)
        f = lambda X: np.sin(X).sum(axis=1)
        result = local_search_de(f, lb, ub, pop_size=8, budget=200, seed=9)
        assert np.all(result >= lb) and np.all(result <= ub)

    def test_deterministic(self):
        f = lambda X: np.cos(X).sum(axis=1)
        a = local_search_de(f, np.zeros(3), np.ones(3), 6, 120, seed=13)
        b = local_search_de(f, np.zeros(3), np.ones(3), 6, 120, seed=13)
        assert np.array_equal(a, b)

    def test_never_worse_than_initial_sample(self):
        f = lambda X: np.sum((X - 0.3) ** 2, axis=1)
        lb, ub = np.zeros(4), np.ones(4)
        result = local_search_de(f, lb, ub, pop_size=10, budget=300, seed=17)
        ref = np.random.default_rng(17)
        init = lb + ref.random((10, 4)) * (ub - lb)
        assert f(result[None, :])[0] <= f(init).min()

    def test_invalid_arguments(self):
        f = lambda X: np.zeros(len(X))
        with pytest.raises(ValueError):
            local_search_de(f, np.zeros(2), np.ones(2), pop_size=5, budget=4, seed=0)
        with pytest.raises(ValueError):
            local_search_de(f, np.ones(2), np.zeros(2), pop_size=5, budget=10, seed=0)
        with pytest.raises(ValueError):
            local_search_de(f, np.zeros(2), np.ones(3), pop_size=5, budget=10, seed=0)
        with pytest.raises(ValueError):
            local_search_de(f, np.zeros(2), np.ones(2), pop_size=2, budget=10, seed=0)
