import itertools
import unittest

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from vaxnet.annotate import Stance, StanceMap
from vaxnet.cluster import Partition
from vaxnet.graph import WeightedGraph
from vaxnet.synth import SbmSpec, sbm_generate, sbm_membership
from vaxnet.polarization import (
    Bipartition,
    NmiError,
    RwcError,
    RwcMethod,
    default_k_absorb,
    nmi,
    rwc_exact,
    rwc_montecarlo,
    stance_bipartition,
)


def half_mixing():
    """x2 retweets x1 and y1 equally; y2 only retweets y1."""
    graph = WeightedGraph.from_edges(True, {("x2", "x1"): 1, ("x2", "y1"): 1, ("y2", "y1"): 1})
    return graph, Bipartition({"x1", "x2"}, {"y1", "y2"})


def separated():
    graph = WeightedGraph.from_edges(
        True, {("x2", "x1"): 1, ("x3", "x1"): 2, ("y2", "y1"): 1, ("y3", "y1"): 1}
    )
    return graph, Bipartition({"x1", "x2", "x3"}, {"y1", "y2", "y3"})


class BipartitionTests(unittest.TestCase):
    def test_sides_must_be_disjoint(self):
        with self.assertRaises(RwcError):
            Bipartition({"a", "b"}, {"b", "c"})

    def test_stance_bipartition_puts_novax_communities_on_x(self):
        graph = WeightedGraph.from_edges(True, {("a", "b"): 1, ("c", "b"): 1})
        partition = Partition({"a": 0, "b": 1, "c": 1})
        sides = stance_bipartition(graph, partition, StanceMap({0: Stance.NO_VAX, 1: Stance.OTHER}))
        self.assertEqual(sides.side_x, frozenset({"a"}))
        self.assertEqual(sides.side_y, frozenset({"b", "c"}))

    def test_default_absorbing_set_size(self):
        self.assertEqual(default_k_absorb(100), 10)
        self.assertEqual(default_k_absorb(1000), 20)


class ExactRwcTests(unittest.TestCase):
    def test_separated_sides_score_exactly_one(self):
        graph, sides = separated()
        result = rwc_exact(graph, sides, k_absorb=1)
        self.assertEqual(result.rwc, 1.0)
        self.assertEqual((result.p_xy, result.p_yx), (0.0, 0.0))
        self.assertIs(result.method, RwcMethod.EXACT)

    def test_half_mixing_side(self):
        graph, sides = half_mixing()
        result = rwc_exact(graph, sides)
        self.assertAlmostEqual(result.p_xy, 0.5)
        self.assertAlmostEqual(result.p_yx, 0.0)
        self.assertAlmostEqual(result.rwc, 0.5)
        # default k is capped so each side keeps a start node
        self.assertEqual(result.k_absorb, (1, 1))

    def test_reversed_walks_follow_retweets_backwards(self):
        graph, sides = half_mixing()
        result = rwc_exact(graph, sides, reverse=True)
        self.assertAlmostEqual(result.p_xy, 0.0)
        self.assertAlmostEqual(result.p_yx, 0.5)

    def test_walks_restart_from_nodes_without_out_edges(self):
        # x3 has no out-edge; walks reaching it restart on side X until x1 absorbs them
        graph = WeightedGraph.from_edges(True, {("x2", "x1"): 1, ("x2", "x3"): 1, ("y2", "y1"): 1})
        sides = Bipartition({"x1", "x2", "x3"}, {"y1", "y2"})
        exact = rwc_exact(graph, sides, k_absorb=1)
        self.assertEqual(exact.rwc, 1.0)
        sampled = rwc_montecarlo(graph, sides, k_absorb=1, n_walks=200, seed=0)
        self.assertEqual(sampled.rwc, 1.0)

    def test_a_side_without_candidates_raises(self):
        graph = WeightedGraph.from_edges(True, {("x1", "y1"): 1, ("x2", "y1"): 1, ("y2", "y1"): 1})
        with self.assertRaises(RwcError):
            rwc_exact(graph, Bipartition({"x1", "x2"}, {"y1", "y2"}))

    def test_complete_graph_is_not_controversial(self):
        nodes = [f"v{i:02d}" for i in range(20)]
        graph = WeightedGraph.from_edges(False, {pair: 1 for pair in itertools.combinations(nodes, 2)})
        rng = np.random.default_rng(1)
        side = set(rng.choice(nodes, size=10, replace=False).tolist())
        result = rwc_exact(graph, Bipartition(side, set(nodes) - side))
        self.assertLess(abs(result.rwc), 0.05)

    def test_bipartition_must_cover_the_graph(self):
        graph, _ = half_mixing()
        with self.assertRaises(RwcError):
            rwc_exact(graph, Bipartition({"x1"}, {"y1"}))


class MonteCarloRwcTests(unittest.TestCase):
    def test_estimate_is_close_to_the_exact_value(self):
        graph, sides = half_mixing()
        result = rwc_montecarlo(graph, sides, n_walks=20_000, seed=3)
        self.assertAlmostEqual(result.rwc, 0.5, delta=0.05)
        self.assertAlmostEqual(result.p_yx, 0.0)
        self.assertLess(result.stderr, 0.01)
        self.assertEqual(result.n_walks, 20_000)

    def test_estimate_matches_the_exact_solve_on_a_block_model(self):
        spec = SbmSpec(sizes=[200, 200], p_in=0.05, p_out=0.001, seed=2)
        graph = sbm_generate(spec)
        membership = sbm_membership(spec)
        sides = Bipartition(
            {node for node, block in membership.items() if block == 0},
            {node for node, block in membership.items() if block == 1},
        )
        exact = rwc_exact(graph, sides)
        sampled = rwc_montecarlo(graph, sides, n_walks=100_000, seed=5)
        self.assertAlmostEqual(sampled.rwc, exact.rwc, delta=0.02)

    def test_same_seed_same_estimate(self):
        graph, sides = half_mixing()
        first = rwc_montecarlo(graph, sides, n_walks=500, seed=11)
        second = rwc_montecarlo(graph, sides, n_walks=500, seed=11)
        self.assertEqual(first, second)

    def test_single_walk_scores_are_extreme_or_zero(self):
        graph, sides = half_mixing()
        for seed in range(10):
            with self.subTest(seed=seed):
                result = rwc_montecarlo(graph, sides, n_walks=1, seed=seed)
                self.assertIn(result.rwc, (-1.0, 0.0, 1.0))

    def test_walk_count_must_be_positive(self):
        graph, sides = half_mixing()
        with self.assertRaises(RwcError):
            rwc_montecarlo(graph, sides, n_walks=0)


class NmiTests(unittest.TestCase):
    def test_relabelled_partitions_agree_fully(self):
        a = {"u1": 0, "u2": 0, "u3": 1, "u4": 1}
        b = {"u1": 7, "u2": 7, "u3": 3, "u4": 3}
        self.assertEqual(nmi(a, b), 1.0)

    def test_independent_partitions_score_zero(self):
        a = {"u1": 0, "u2": 0, "u3": 1, "u4": 1}
        b = {"u1": 0, "u2": 1, "u3": 0, "u4": 1}
        self.assertAlmostEqual(nmi(a, b), 0.0)

    def test_trivial_partition_against_a_split_scores_zero(self):
        a = {"u1": 0, "u2": 0, "u3": 0}
        b = {"u1": 0, "u2": 1, "u3": 1}
        self.assertEqual(nmi(a, b), 0.0)
        self.assertEqual(nmi(a, a), 1.0)

    def test_only_shared_nodes_count(self):
        a = Partition({"u1": 0, "u2": 0, "u3": 1, "u4": 1, "only_a": 5})
        b = {"u1": 1, "u2": 1, "u3": 0, "u4": 0, "only_b": 2}
        self.assertEqual(nmi(a, b), 1.0)

    def test_matches_arithmetic_normalization(self):
        labels_a = [0, 0, 0, 1, 1, 1, 2]
        labels_b = [0, 0, 1, 1, 2, 2, 2]
        a = {f"u{i}": label for i, label in enumerate(labels_a)}
        b = {f"u{i}": label for i, label in enumerate(labels_b)}
        expected = normalized_mutual_info_score(labels_a, labels_b, average_method="arithmetic")
        self.assertAlmostEqual(nmi(a, b), expected)

    def test_independent_random_partitions_score_near_zero(self):
        scores = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a = {f"u{i}": int(label) for i, label in enumerate(rng.integers(5, size=10_000))}
            b = {f"u{i}": int(label) for i, label in enumerate(rng.integers(5, size=10_000))}
            scores.append(nmi(a, b))
        self.assertLess(float(np.mean(scores)), 0.01)

    def test_disjoint_partitions_raise(self):
        with self.assertRaises(NmiError):
            nmi({"a": 0}, {"b": 0})


if __name__ == "__main__":
    unittest.main()
