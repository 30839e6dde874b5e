import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import expansion_size_eq, fps_oracle, naive_group_start_ranks, skip_take_ranks, sorted_neighbors
from rffs.graph import (
    GraphError,
    annular_knn,
    build_fusion_graphs,
    build_hierarchy,
    downsample_labels,
    dump_graphs,
    expansion_size,
    farthest_point_sampling,
    knn_search,
    ring_knn,
    sparse_knn,
    sparse_ranks,
)

LINE = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])


def test_knn_query_on_data_point(rng):
    pts = rng.normal(size=(50, 3))
    assert knn_search(pts, pts[17:18], 1)[0, 0] == 17


def test_knn_collinear():
    np.testing.assert_array_equal(knn_search(LINE, LINE[:1], 3), [[0, 1, 2]])


def test_knn_ties_break_by_index():
    # query midway between 3 and 4, and between 2 and 5
    q = np.array([[3.5, 0, 0]])
    np.testing.assert_array_equal(knn_search(LINE, q, 4), [[3, 4, 2, 5]])
    np.testing.assert_array_equal(knn_search(LINE, q, 4, method="kdtree"), [[3, 4, 2, 5]])


def test_knn_k_too_large():
    with pytest.raises(GraphError):
        knn_search(LINE, LINE, 11)


def test_knn_brute_matches_kdtree_on_random_configs():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n = int(rng.integers(5, 200))
        pts = rng.normal(size=(n, 3)) * rng.uniform(0.1, 10)
        if trial % 5 == 0:  # lattice data with many exact ties
            pts = np.round(pts)
        q = rng.normal(size=(int(rng.integers(1, 6)), 3))
        k = int(rng.integers(1, n + 1))
        np.testing.assert_array_equal(knn_search(pts, q, k, "brute"), knn_search(pts, q, k, "kdtree"))


@pytest.mark.parametrize("k, step, r, expected", [(8, 4, 1, 8), (4, 2, 2, 6), (5, 2, 2, 8)])
def test_expansion_size_examples(k, step, r, expected):
    assert expansion_size(k, step, r) == expected


def test_expansion_size_matches_fraction_evaluation():
    for k in range(1, 40):
        for step in range(1, 10):
            for r in range(1, 10):
                assert expansion_size(k, step, r) == expansion_size_eq(k, step, r)


def test_expansion_size_rejects_nonpositive():
    with pytest.raises(GraphError):
        expansion_size(0, 1, 1)


def test_sparse_ranks_hand_trace():
    assert sparse_ranks(4, 2, 2).tolist() == [2, 3, 5, 6]
    assert sparse_ranks(5, 2, 2).tolist() == [2, 3, 5, 6, 8]


def test_sparse_ranks_agree_with_naive_loop_where_it_is_consistent():
    # the naive loop only drops or misplaces ranks in the trailing partial group
    disagreements = 0
    for k in range(1, 33):
        for step in range(1, 9):
            for r in range(1, 9):
                literal = naive_group_start_ranks(k, step, r)
                ours = sparse_ranks(k, step, r).tolist()
                if len(literal) == k:
                    assert literal == ours
                else:
                    disagreements += 1
                    assert ours[:k - k % step] == literal[:k - k % step]
    assert disagreements > 0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 48), st.integers(1, 10), st.integers(1, 10))
def test_sparse_ranks_properties(k, step, r):
    ranks = sparse_ranks(k, step, r)
    assert len(ranks) == k
    assert np.all(np.diff(ranks) > 0)
    assert ranks[-1] == expansion_size(k, step, r)
    assert ranks.tolist() == skip_take_ranks(k, step, r)


def test_sparse_knn_r1_equals_knn(rng):
    pts = rng.normal(size=(120, 3))
    for k in (1, 4, 9, 32):
        for step in (1, 2, 3, 4, 8):
            g = sparse_knn(pts, pts, k, step, 1)
            np.testing.assert_array_equal(g.neighbor_indices, knn_search(pts, pts, k))


def test_sparse_knn_rows_unique_and_valid(rng):
    pts = rng.normal(size=(300, 3))
    g = sparse_knn(pts, pts, 16, 4, 3)
    assert g.neighbor_indices.shape == (300, 16)
    assert all(len(set(row)) == 16 for row in g.neighbor_indices.tolist())
    assert g.neighbor_indices.min() >= 0 and g.neighbor_indices.max() < 300


def test_sparse_knn_matches_oracle(rng):
    for _ in range(200):
        k, step, r = int(rng.integers(4, 33)), int(rng.integers(1, 9)), int(rng.integers(1, 5))
        n = expansion_size(k, step, r) + int(rng.integers(0, 50))
        pts = rng.uniform(-5, 5, size=(n, 3))
        q = rng.uniform(-5, 5, size=(1, 3))
        got = sparse_knn(pts, q, k, step, r).neighbor_indices[0]
        order = sorted_neighbors(pts, q[0])
        np.testing.assert_array_equal(got, order[np.array(skip_take_ranks(k, step, r)) - 1])


def test_sparse_knn_insufficient_points(rng):
    with pytest.raises(GraphError, match="needs"):
        sparse_knn(rng.normal(size=(10, 3)), rng.normal(size=(1, 3)), 8, 2, 3)


def test_annular_rings():
    pts = np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)])
    q = pts[:1]
    np.testing.assert_array_equal(annular_knn(pts, q, 4, 1).neighbor_indices, knn_search(pts, q, 4))
    np.testing.assert_array_equal(annular_knn(pts, q, 4, 5).neighbor_indices, [[4, 5, 6, 7]])
    np.testing.assert_array_equal(annular_knn(pts, q, 4, 9).neighbor_indices, [[8, 9, 10, 11]])


def test_annular_rejects_indivisible_rate():
    with pytest.raises(GraphError, match="divisible"):
        annular_knn(LINE, LINE[:1], 4, 3)


def test_annular_is_contiguous_run_ending_at_ring_size(rng):
    pts = rng.normal(size=(80, 3))
    for k in (2, 3, 4, 8):
        for n in (1, 2, 3):
            r = (n - 1) * k + 1
            got = annular_knn(pts, pts[:5], k, r).neighbor_indices
            for i in range(5):
                order = sorted_neighbors(pts, pts[i]).tolist()
                ranks = [order.index(j) + 1 for j in got[i]]
                assert ranks == list(range(n * k - k + 1, n * k + 1))


def test_ring_knn_agrees_with_annular_where_defined(rng):
    pts = rng.normal(size=(60, 3))
    for r in (1, 5, 9):
        np.testing.assert_array_equal(ring_knn(pts, pts, 4, r).neighbor_indices,
                                      annular_knn(pts, pts, 4, r).neighbor_indices)
    g = ring_knn(pts, pts, 4, 3)
    assert g.mode == "annular"
    order = sorted_neighbors(pts, pts[0])
    np.testing.assert_array_equal(g.neighbor_indices[0], order[2:6])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10_000))
def test_neighbor_outputs_invariant_to_scaling(scale, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(60, 3))
    for fn in (lambda p: knn_search(p, p, 6),
               lambda p: sparse_knn(p, p, 6, 2, 3).neighbor_indices,
               lambda p: annular_knn(p, p, 4, 5).neighbor_indices,
               lambda p: farthest_point_sampling(p, 10)):
        np.testing.assert_array_equal(fn(pts), fn(pts * scale))


def test_fps_full_permutation(rng):
    pts = rng.normal(size=(30, 3))
    assert sorted(farthest_point_sampling(pts, 30).tolist()) == list(range(30))


def test_fps_collinear():
    assert farthest_point_sampling(LINE, 3).tolist() == [0, 9, 4]


def test_fps_prefix_property(rng):
    pts = rng.normal(size=(64, 3))
    full = farthest_point_sampling(pts, 20, seed=3)
    for m in (1, 5, 13):
        np.testing.assert_array_equal(farthest_point_sampling(pts, m, seed=3), full[:m])


def test_fps_matches_brute_force_small():
    rng = np.random.default_rng(5)
    for seed in range(10):
        pts = rng.normal(size=(int(rng.integers(10, 60)), 3))
        m = int(rng.integers(1, len(pts)))
        got = farthest_point_sampling(pts, m, seed)
        np.testing.assert_array_equal(got, fps_oracle(pts, m, int(got[0])))
        if seed == 0:
            assert got[0] == 0


def test_fps_too_many():
    with pytest.raises(GraphError):
        farthest_point_sampling(LINE, 11)


def test_hierarchy_level_sizes(block_4096):
    h = build_hierarchy(block_4096.xyz, block_4096.labels)
    assert h.sizes == [4096, 1024, 256, 128]


def test_hierarchy_structure(block_4096):
    h = build_hierarchy(block_4096.xyz, block_4096.labels)
    for lvl in range(1, 4):
        fine = h.sizes[lvl - 1]
        m = h.mapping_graphs[lvl - 1]
        assert m.shape == (h.sizes[lvl], 32)
        assert m.min() >= 0 and m.max() < fine
        assert h.point_graphs[lvl - 1].shape == (h.sizes[lvl], 32)
        np.testing.assert_array_equal(h.xyz[lvl], h.xyz[lvl - 1][h.fps_indices[lvl - 1]])
        # each sampled point is its own nearest neighbor in the finer level
        np.testing.assert_array_equal(m[:, 0], h.fps_indices[lvl - 1])
        np.testing.assert_array_equal(h.labels[lvl], h.labels[lvl - 1][h.fps_indices[lvl - 1]])
    composed = h.fps_indices[0][h.fps_indices[1][h.fps_indices[2]]]
    np.testing.assert_array_equal(h.labels[3], h.labels[0][composed])


def test_hierarchy_too_small():
    with pytest.raises(GraphError, match="below K"):
        build_hierarchy(np.random.default_rng(0).normal(size=(100, 3)))


def test_downsample_labels_examples():
    labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    assert downsample_labels(labels, [np.array([0, 4])])[1].tolist() == [0, 2]
    uniform = downsample_labels(np.full(8, 2), [np.array([0, 3, 5, 7]), np.array([1, 2])])
    assert all(set(a.tolist()) == {2} for a in uniform)
    with pytest.raises(IndexError):
        downsample_labels(labels, [np.array([8])])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_downsampled_classes_are_subsets(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(64, 3))
    labels = rng.integers(0, 5, size=64)
    h = build_hierarchy(pts, labels, k=4, ratios=(2, 2, 2), seed=seed % 7)
    for a, b in zip(h.labels, h.labels[1:]):
        assert set(b.tolist()) <= set(a.tolist())


def test_graph_dump(tmp_path, rng):
    pts = rng.normal(size=(256, 3))
    h = build_hierarchy(pts, k=8)
    fusion = build_fusion_graphs(h.xyz[-1], k=4, step=2, dilations=(1,))
    dump_graphs(h, fusion, tmp_path / "g.json")
    doc = json.loads((tmp_path / "g.json").read_text())
    assert [lvl["size"] for lvl in doc["levels"]] == [256, 64, 16, 8]
    assert list(doc["fusion"]["dilated"]) == ["1"] and list(doc["fusion"]["annular"]) == ["1"]
