import heapq

import numpy as np
import pytest

from floydnet.graphs import (
    CapabilityError,
    Graph,
    GraphFormatError,
    NodePermutation,
    apply_permutation,
    complete_graph,
    cycle_graph,
    cycle_count_oracle,
    floyd_warshall_oracle,
    from_edges,
    gen_random_graph,
    identity_permutation,
    load_graph,
    path_graph,
    random_permutation,
    save_graph,
)


def dijkstra_all_pairs(g):
    """Independent oracle: repeated single-source Dijkstra with a heap."""
    dist = np.full((g.n, g.n), np.inf)
    for src in range(g.n):
        d = [np.inf] * g.n
        d[src] = 0.0
        heap = [(0.0, src)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > d[u]:
                continue
            for v in np.flatnonzero(g.adjacency[u]):
                alt = du + g.weights[u, v]
                if alt < d[v]:
                    d[v] = alt
                    heapq.heappush(heap, (alt, v))
        dist[src] = d
    return dist


class TestLoadGraph:
    def test_edge_list_basic(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("3\n0 1 2.0\n1 2 3.0\n")
        g = load_graph(path)
        assert g.n == 3
        assert g.num_edges() == 2
        assert g.weights[0, 1] == 2.0 and g.weights[1, 0] == 2.0
        assert g.weights[1, 2] == 3.0

    def test_empty_edge_section(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("4\n")
        g = load_graph(path)
        assert g.n == 4
        assert not g.adjacency.any()

    def test_index_out_of_range(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("3\n0 5 1.0\n")
        with pytest.raises(GraphFormatError) as err:
            load_graph(path)
        assert "line 2" in str(err.value)

    def test_features_and_comments(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text(
            "# header comment\n"
            "3 2 1 2\n"
            "0.5 -1.5\n"
            "0 1.0 2.0\n"
            "1 3.0 4.0\n"
            "2 5.0 6.0\n"
            "0 1 2.5 0.25  # an edge\n"
        )
        g = load_graph(path)
        assert g.node_feats.shape == (3, 2)
        assert g.node_feats[1].tolist() == [3.0, 4.0]
        assert g.graph_feats.tolist() == [0.5, -1.5]
        assert g.edge_feats[0, 1].tolist() == [0.25]
        assert g.edge_feats[1, 0].tolist() == [0.25]

    def test_dense_matrix(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("3\n0 2 inf\n2 0 5\ninf 5 0\n")
        g = load_graph(path, format="dense-matrix")
        assert g.num_edges() == 2
        assert not g.adjacency[0, 2]
        assert g.weights[1, 2] == 5.0

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("3 0 2 0\n0 1 2.0 1.0\n")  # edge missing one feature
        with pytest.raises(GraphFormatError):
            load_graph(path)

    def test_round_trip(self, tmp_path):
        g = gen_random_graph(7, 0.5, (1, 9), seed=3)
        g.node_feats = np.random.default_rng(0).standard_normal((7, 2))
        path = tmp_path / "g.txt"
        save_graph(g, path)
        g2 = load_graph(path)
        assert g.equal(g2)

    def test_dense_round_trip(self, tmp_path):
        g = gen_random_graph(6, 0.7, (1, 9), seed=4)
        path = tmp_path / "g.txt"
        save_graph(g, path, format="dense-matrix")
        g2 = load_graph(path, format="dense-matrix")
        assert np.array_equal(g.adjacency, g2.adjacency)
        assert np.array_equal(g.weights, g2.weights)


class TestGenerator:
    def test_p_zero_edgeless(self):
        g = gen_random_graph(5, 0.0, (1, 10), seed=1)
        assert not g.adjacency.any()

    def test_p_one_complete_unit_weights(self):
        g = gen_random_graph(5, 1.0, (1, 1), seed=1)
        off_diag = ~np.eye(5, dtype=bool)
        assert g.adjacency[off_diag].all()
        assert (g.weights[off_diag] == 1.0).all()

    def test_determinism(self):
        a = gen_random_graph(8, 0.5, (1, 100), seed=7)
        b = gen_random_graph(8, 0.5, (1, 100), seed=7)
        assert a.equal(b)

    def test_weights_are_integers_in_range(self):
        g = gen_random_graph(10, 0.6, (3, 7), seed=2)
        w = g.weights[g.adjacency]
        assert np.array_equal(w, np.round(w))
        assert w.min() >= 3 and w.max() <= 7

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            gen_random_graph(0, 0.5)
        with pytest.raises(ValueError):
            gen_random_graph(3, 1.5)
        with pytest.raises(ValueError):
            gen_random_graph(3, 0.5, (5, 2))


class TestPermutation:
    def test_identity(self):
        g = gen_random_graph(6, 0.5, (1, 5), seed=0)
        assert apply_permutation(g, identity_permutation(6)).equal(g)

    def test_inverse_composition(self):
        g = gen_random_graph(6, 0.5, (1, 5), seed=1)
        pi = random_permutation(6, seed=2)
        assert apply_permutation(apply_permutation(g, pi), pi.inverse()).equal(g)

    def test_path_relabel(self):
        g = path_graph(3)
        out = apply_permutation(g, NodePermutation([2, 1, 0]))
        assert out.adjacency[2, 1] and out.adjacency[1, 0]
        assert not out.adjacency[2, 0]
        assert g.num_edges() == out.num_edges()

    def test_not_a_bijection(self):
        with pytest.raises(ValueError):
            NodePermutation([0, 0, 2])

    def test_size_mismatch(self):
        g = path_graph(3)
        with pytest.raises(ValueError):
            apply_permutation(g, identity_permutation(4))


class TestFloydWarshall:
    def test_two_hop_path(self):
        g = from_edges(3, [(0, 1), (1, 2)], weights=[2.0, 3.0])
        d = floyd_warshall_oracle(g)
        assert d[0, 2] == 5.0
        assert (np.diag(d) == 0).all()

    def test_edgeless_all_infinite(self):
        g = gen_random_graph(3, 0.0, seed=0)
        d = floyd_warshall_oracle(g)
        off = ~np.eye(3, dtype=bool)
        assert np.isinf(d[off]).all()

    def test_matches_dijkstra(self):
        g = gen_random_graph(10, 0.4, (1, 9), seed=11)
        assert np.array_equal(floyd_warshall_oracle(g), dijkstra_all_pairs(g))

    def test_negative_weight_rejected(self):
        g = from_edges(2, [(0, 1)], weights=[-1.0])
        with pytest.raises(ValueError):
            floyd_warshall_oracle(g)

    def test_permutation_equivariance(self):
        for seed in range(5):
            g = gen_random_graph(8, 0.45, (1, 9), seed=seed)
            pi = random_permutation(8, seed=100 + seed)
            d = floyd_warshall_oracle(g)
            dp = floyd_warshall_oracle(apply_permutation(g, pi))
            assert np.array_equal(dp, d[np.ix_(pi.perm, pi.perm)])

    def test_triangle_inequality(self):
        g = gen_random_graph(9, 0.5, (1, 9), seed=5)
        d = floyd_warshall_oracle(g)
        for i in range(9):
            for j in range(9):
                for k in range(9):
                    if np.isfinite(d[i, j]) and np.isfinite(d[j, k]):
                        assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


class TestCycleCounts:
    def test_triangle(self):
        assert cycle_count_oracle(complete_graph(3), 3) == 1

    def test_c6_girth(self):
        g = cycle_graph(6)
        assert cycle_count_oracle(g, 3) == 0
        assert cycle_count_oracle(g, 6) == 1

    def test_k4_triangles(self):
        # every 3-subset of K4 induces a triangle
        assert cycle_count_oracle(complete_graph(4), 3) == 4

    def test_k5_counts(self):
        # closed-form counts on K5: C(5,3)=10 triangles, C(5,4)*3=15 squares,
        # C(5,5)*4!/2=12 pentagons
        g = complete_graph(5)
        assert cycle_count_oracle(g, 3) == 10
        assert cycle_count_oracle(g, 4) == 15
        assert cycle_count_oracle(g, 5) == 12

    @pytest.mark.parametrize("length", [3, 4, 5, 6])
    def test_level_sums(self, length):
        g = gen_random_graph(9, 0.55, (1, 1), seed=length)
        total = cycle_count_oracle(g, length)
        node = cycle_count_oracle(g, length, level="node")
        edge = cycle_count_oracle(g, length, level="edge")
        assert node.sum() == length * total
        assert np.triu(edge).sum() == length * total
        assert np.array_equal(edge, edge.T)

    def test_capability_error(self):
        g = gen_random_graph(17, 0.5, seed=0)
        with pytest.raises(CapabilityError):
            cycle_count_oracle(g, 3)


class TestGraphValidation:
    def test_asymmetric_rejected(self):
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 1] = True
        with pytest.raises(ValueError):
            Graph(n=3, node_feats=np.zeros((3, 0)), adjacency=adj, weights=np.zeros((3, 3)))

    def test_self_loop_rejected(self):
        adj = np.eye(3, dtype=bool)
        with pytest.raises(ValueError):
            Graph(n=3, node_feats=np.zeros((3, 0)), adjacency=adj, weights=np.zeros((3, 3)))
