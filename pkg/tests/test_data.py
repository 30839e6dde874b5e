import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rffs.data import (
    ClassMap,
    PointCloud,
    PointFileError,
    SceneSpec,
    denormalize_block,
    normalize_block,
    parse_points,
    partition_blocks,
    read_predictions,
    sample_block,
    synth_scene,
    write_points,
    write_predictions,
)


def test_parse_three_labeled_points(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("0 0 0 1\n1 0 0 0\n2 1 0 1\n")
    cloud = parse_points(p, ["x", "y", "z", "label"])
    assert len(cloud) == 3
    assert cloud.labels.tolist() == [1, 0, 1]
    np.testing.assert_array_equal(cloud.xyz[2], [2, 1, 0])


def test_parse_reports_bad_line_number(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0 0 0\n1 1 1 0\n2 2 2 0\n3 3 3 0\n1 2\n")
    with pytest.raises(PointFileError, match=":5:"):
        parse_points(p, ["x", "y", "z", "label"])


def test_parse_header_attrs_and_unlabeled(tmp_path):
    p = tmp_path / "h.txt"
    p.write_text("#cols: x y z intensity label\n0 0 0 7 -1\n1 1 1 8 -1\n")
    cloud = parse_points(p)
    assert cloud.labels is None
    assert cloud.attr_names == ("intensity",)
    np.testing.assert_array_equal(cloud.attrs[:, 0], [7, 8])


def test_parse_unknown_label(tmp_path):
    p = tmp_path / "u.txt"
    p.write_text("0 0 0 0\n1 1 1 6\n")
    with pytest.raises(PointFileError, match="unknown label"):
        parse_points(p, ["x", "y", "z", "label"], num_classes=5)


def test_parse_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_points(tmp_path / "nope.txt")


def test_points_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(20, 3)) * 1e3, rng.uniform(size=(20, 2)), ("i", "r"), rng.integers(0, 3, 20))
    write_points(cloud, tmp_path / "c.txt")
    back = parse_points(tmp_path / "c.txt")
    assert back.xyz.tobytes() == cloud.xyz.tobytes()
    assert back.attrs.tobytes() == cloud.attrs.tobytes()
    assert back.labels.tolist() == cloud.labels.tolist()


def test_predictions_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(2, 3)) / 3, labels=np.array([1, 0]))
    write_predictions(cloud, [0, 4], tmp_path / "p.txt")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert len([ln for ln in lines if not ln.startswith("#")]) == 2
    back, pred = read_predictions(tmp_path / "p.txt")
    assert back.xyz.tobytes() == cloud.xyz.tobytes()
    assert back.labels.tolist() == [1, 0] and pred.tolist() == [0, 4]
    with pytest.raises(ValueError):
        write_predictions(cloud, [0], tmp_path / "q.txt")


def test_predictions_unlabeled_writes_minus_one(tmp_path):
    cloud = PointCloud(np.zeros((1, 3)))
    write_predictions(cloud, [2], tmp_path / "p.txt")
    assert (tmp_path / "p.txt").read_text().splitlines()[1].split()[3] == "-1"


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[0, 0, np.inf]]))
    with pytest.raises(ValueError):
        ClassMap(("a",))
    with pytest.raises(ValueError):
        ClassMap(("a", "a"))


def test_partition_single_square(rng):
    cloud = PointCloud(rng.uniform(0, 29, size=(100, 3)))
    blocks = partition_blocks(cloud, 30)
    assert len(blocks) == 1 and len(blocks[0]) == 100


def test_partition_two_clusters(rng):
    xyz = np.vstack([rng.uniform(0, 10, size=(100, 3)), rng.uniform(0, 10, size=(80, 3)) + [100, 0, 0]])
    blocks = partition_blocks(PointCloud(xyz), 30)
    assert len(blocks) == 2
    a, b = (set(bl.point_indices.tolist()) for bl in blocks)
    assert not a & b and a | b == set(range(180))


def test_partition_merges_stray_block(rng):
    main = rng.uniform(0, 29, size=(100, 3))
    stray = rng.uniform(0, 5, size=(3, 3)) + [31, 0, 0]
    with_stray = partition_blocks(PointCloud(np.vstack([main, stray])), 30, min_count=64)
    unmerged = partition_blocks(PointCloud(np.vstack([main, stray])), 30, min_count=1)
    assert len(unmerged) == 2 and len(with_stray) == 1
    assert len(with_stray[0]) == 103


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([5.0, 10.0, 30.0]), st.integers(1, 80))
def test_partition_is_exact_cover_within_extent(seed, size, min_count):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(0, 60, size=(int(rng.integers(1, 400)), 3))
    blocks = partition_blocks(PointCloud(xyz), size, min_count)
    idx = np.concatenate([b.point_indices for b in blocks])
    assert sorted(idx.tolist()) == list(range(len(xyz)))
    for b in blocks:
        xy = xyz[b.point_indices, :2]
        assert np.all(xy >= b.origin - 1e-9) and np.all(xy < b.origin + b.extent + 1e-9)


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_blocks(PointCloud(np.zeros((1, 3))), 0)


def test_sample_block_cases():
    assert sorted(sample_block(50, 50, seed=1).tolist()) == list(range(50))
    idx = sample_block(10, 4096, seed=2)
    assert len(idx) == 4096 and set(idx.tolist()) == set(range(10))
    big = sample_block(5000, 4096, seed=3)
    assert len(set(big.tolist())) == 4096
    np.testing.assert_array_equal(sample_block(777, 100, 9), sample_block(777, 100, 9))
    with pytest.raises(ValueError):
        sample_block(10, 0)


def test_normalize_examples():
    pts = np.array([[-1.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 1]])
    norm, offset, scale = normalize_block(pts)
    assert scale == 1.0
    np.testing.assert_allclose(norm, pts)
    norm, _, scale = normalize_block(np.array([[3.0, 4.0, 5.0]]))
    assert scale == 1.0 and norm.tolist() == [[0, 0, 0]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1e4))
def test_normalize_round_trip(seed, spread):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(50, 3)) * spread + rng.uniform(-1e5, 1e5, size=3)
    norm, offset, scale = normalize_block(pts)
    assert np.abs(norm).max() <= 1 + 1e-12
    np.testing.assert_allclose(denormalize_block(norm, offset, scale), pts, atol=1e-5, rtol=0)


def test_synth_scene_has_every_class(scene):
    cloud, cmap = scene
    assert len(cloud) == 4096
    assert set(cloud.labels.tolist()) == set(range(5)) and cmap.count == 5


def test_synth_scene_deterministic():
    a, _ = synth_scene(SceneSpec(seed=4))
    b, _ = synth_scene(SceneSpec(seed=4))
    assert a.xyz.tobytes() == b.xyz.tobytes() and a.labels.tobytes() == b.labels.tobytes()


def test_synth_ground_only():
    cloud, _ = synth_scene(SceneSpec(classes=("ground",)))
    assert len(set(cloud.labels.tolist())) == 1


def test_synth_errors():
    with pytest.raises(ValueError):
        synth_scene(SceneSpec(extent=0))
    with pytest.raises(ValueError):
        synth_scene(SceneSpec(classes=("ground", "spaceship")))
