import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from gnnwm.graph import (DanglingEdgeError, Graph, LabelRangeError, MalformedHeaderError,
                         NonFiniteFeatureError, SplitSpec, dumps_graph, load_graph, loads_graph,
                         random_subgraphs, sample_subgraphs, save_graph, split_nodes, subgraph_size,
                         synth_graph)
from gnnwm.numeric import Rng


def test_minimal_fixture_file(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("GNNWM-GRAPH v1 N=2 F=3 C=2 E=1\n0 1.0 0.0 2.5\n1 0.0 0.5 0.0\n0 1\n")
    g = load_graph(p)
    assert (g.num_nodes, g.num_features, g.num_classes, g.num_edges) == (2, 3, 2, 1)
    assert g.adjacency[0, 1] == 1.0 and g.adjacency[1, 0] == 1.0


def test_dangling_edge_rejected(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("GNNWM-GRAPH v1 N=3 F=1 C=2 E=1\n0 1.0\n1 0.0\n0 3.0\n0 5\n")
    with pytest.raises(DanglingEdgeError):
        load_graph(p)


@pytest.mark.parametrize("text,err", [
    ("", MalformedHeaderError),
    ("GRAPH N=1\n", MalformedHeaderError),
    ("GNNWM-GRAPH v1 N=2 F=1 C=2 E=0\n0 1.0\n", MalformedHeaderError),
    ("GNNWM-GRAPH v1 N=1 F=2 C=2 E=0\n0 1.0\n", MalformedHeaderError),
    ("GNNWM-GRAPH v1 N=1 F=1 C=2 E=0\n2 1.0\n", LabelRangeError),
    ("GNNWM-GRAPH v1 N=1 F=1 C=2 E=0\n0 nan\n", NonFiniteFeatureError),
])
def test_format_errors(text, err):
    with pytest.raises(err):
        loads_graph(text)


def test_round_trip_is_exact(tmp_path):
    g = synth_graph(Rng(5), N=30, F=7, C=3, p_intra=0.3, p_inter=0.05)
    save_graph(g, tmp_path / "g.txt")
    h = load_graph(tmp_path / "g.txt")
    assert_array_equal(g.features, h.features)
    assert_array_equal(g.edges, h.edges)
    assert_array_equal(g.labels, h.labels)
    assert dumps_graph(h) == dumps_graph(g)


def test_edges_normalized_and_self_loops_dropped():
    g = Graph(np.ones((3, 1)), [(2, 0), (0, 2), (1, 1), (1, 2)], [0, 1, 0], 2)
    assert_array_equal(g.edges, [[0, 2], [1, 2]])
    assert np.allclose(g.adjacency.toarray(), g.adjacency.toarray().T)


def test_synth_is_deterministic_per_seed():
    a = synth_graph(Rng(1))
    b = synth_graph(Rng(1))
    assert (a.num_nodes, a.num_features, a.num_classes) == (600, 100, 4)
    assert a.num_edges == b.num_edges
    assert_array_equal(a.features, b.features)
    assert synth_graph(Rng(2)).num_edges != a.num_edges
    # planted partition: most edges stay inside a class
    same = a.labels[a.edges[:, 0]] == a.labels[a.edges[:, 1]]
    assert same.mean() > 0.75


def test_synth_edge_cases():
    assert synth_graph(Rng(0), N=20, F=4, C=2, p_intra=0.0, p_inter=0.0).num_edges == 0
    with pytest.raises(ValueError):
        synth_graph(Rng(0), N=20, F=4, C=2, feature_sparsity=1.0, signal_boost=0.0)
    with pytest.raises(ValueError):
        synth_graph(Rng(0), N=7, C=2)
    with pytest.raises(ValueError):
        synth_graph(Rng(0), p_intra=0.01, p_inter=0.1)


def test_split_sizes_and_determinism(small_graph):
    g10 = synth_graph(Rng(0), N=10, F=3, C=2)
    s = split_nodes(Rng(0), g10, (0.6, 0.2, 0.2))
    assert (len(s.train), len(s.test), len(s.val)) == (6, 2, 2)
    a = split_nodes(Rng(9), small_graph)
    b = split_nodes(Rng(9), small_graph)
    assert_array_equal(a.train, b.train)
    assert_array_equal(np.sort(np.concatenate([a.train, a.test, a.val])), np.arange(small_graph.num_nodes))


def test_split_photo_sized_train_count():
    X = np.ones((7650, 1))
    g = Graph(X, np.zeros((0, 2)), np.zeros(7650, dtype=int), 1)
    assert len(split_nodes(Rng(0), g, (0.6, 0.2, 0.2)).train) == 4590


def test_split_rejects_bad_fractions(small_graph):
    with pytest.raises(ValueError):
        split_nodes(Rng(0), small_graph, (0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        SplitSpec(np.array([0, 1]), np.array([1]), np.array([2]))


def test_subgraph_size_photo():
    assert subgraph_size(0.005, 4590) == 23
    assert subgraph_size(0.01, 360) == 4
    with pytest.raises(ValueError):
        subgraph_size(0.0, 10)


def test_sample_subgraphs_photo_counts():
    train = np.arange(4590)
    split = SplitSpec(train, np.arange(4590, 4600), np.arange(4600, 4610))
    sub, clf = sample_subgraphs(Rng(0), split, 4, 0.005)
    assert sub.T == 4 and sub.n_sub == 23
    assert len(clf) == 4590 - 92
    assert len(np.intersect1d(sub.all_nodes(), clf)) == 0


def test_sample_subgraphs_too_many():
    split = SplitSpec(np.arange(10), np.arange(10, 12), np.arange(12, 14))
    with pytest.raises(ValueError):
        sample_subgraphs(Rng(0), split, 4, 0.3)


@given(st.integers(1, 6), st.floats(0.01, 0.25), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_subgraphs_are_disjoint_training_nodes(T, s, seed):
    train = np.arange(5, 205)
    split = SplitSpec(train, np.arange(5), np.arange(205, 210))
    n_sub = subgraph_size(s, len(train))
    if T * n_sub > len(train):
        return
    sub, clf = sample_subgraphs(Rng(seed), split, T, s)
    allv = sub.all_nodes()
    assert len(np.unique(allv)) == T * n_sub
    assert np.all(np.isin(allv, train))
    assert len(clf) + len(allv) == len(train)


def test_random_subgraphs_within_pool():
    pool = np.arange(50, 80)
    sets = random_subgraphs(Rng(1), pool, 5, 7)
    assert len(sets) == 5
    for s in sets:
        assert len(np.unique(s)) == 7 and np.all(np.isin(s, pool))


def test_induced_adjacency():
    g = Graph(np.ones((4, 1)), [(0, 1), (1, 2), (2, 3)], [0, 0, 0, 0], 1)
    A = g.induced_adjacency(np.array([1, 2, 3])).toarray()
    assert_array_equal(A, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
