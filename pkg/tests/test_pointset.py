import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lepreg.errors import (
    DegenerateConfigurationError,
    EmptySegmentationError,
    InsufficientCorrespondenceError,
    InvalidArgumentError,
)
from lepreg.pointset import (
    LabeledPointSet,
    WeightMode,
    centroids_from_labels,
    pair_by_label,
    read_centroids_csv,
    write_centroids_csv,
)
from lepreg.volume_io import LabelVolume


def _two_voxel_volume(affine):
    data = np.zeros((3, 2, 2), np.uint8)
    data[0, 0, 0] = data[2, 0, 0] = 7
    return LabelVolume(data, affine)


def _phantom(seed=0, shape=(14, 12, 10)):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 4, size=shape).astype(np.int16)


def _raster_scan_centroids(data, affine):
    """Brute-force per-label mean of mapped voxel centres, one voxel at a time."""
    sums, counts = {}, {}
    for idx in np.ndindex(data.shape):
        lab = int(data[idx])
        if lab == 0:
            continue
        w = affine @ np.array([*idx, 1.0])
        sums[lab] = sums.get(lab, 0) + w[:3]
        counts[lab] = counts.get(lab, 0) + 1
    return {lab: sums[lab] / counts[lab] for lab in sums}, counts


def _set(labels, pts, weights=None):
    return LabeledPointSet.from_points(labels, pts, weights)


# --- centroids -----------------------------------------------------------------


def test_two_voxel_centroid():
    pts = centroids_from_labels(_two_voxel_volume(np.eye(4)))
    assert pts.labels.tolist() == [7]
    np.testing.assert_array_equal(pts.points, [[1.0, 0.0, 0.0]])


def test_two_voxel_centroid_scaled():
    pts = centroids_from_labels(_two_voxel_volume(np.diag([2.0, 2.0, 2.0, 1.0])))
    np.testing.assert_array_equal(pts.points, [[2.0, 0.0, 0.0]])


def test_centroids_match_raster_scan_oracle():
    affine = np.array([[1.2, 0.1, 0, -5], [0, 0.9, 0.2, 3], [0.05, 0, 1.5, 7], [0, 0, 0, 1]])
    data = _phantom(1)
    pts = centroids_from_labels(LabelVolume(data, affine), weight_mode="size_proportional")
    oracle, counts = _raster_scan_centroids(data, affine)
    assert pts.labels.tolist() == sorted(oracle)
    for lab, p, w in zip(pts.labels, pts.points, pts.weights):
        np.testing.assert_allclose(p, oracle[int(lab)], rtol=1e-12, atol=1e-12)
        assert w == pytest.approx(counts[int(lab)] / sum(counts.values()), rel=1e-12)


def test_exclusion_and_background():
    pts = centroids_from_labels(LabelVolume(_phantom(2), np.eye(4)), exclude={2})
    assert pts.labels.tolist() == [1, 3]
    with pytest.raises(EmptySegmentationError):
        centroids_from_labels(LabelVolume(_phantom(2), np.eye(4)), exclude={1, 2, 3})
    with pytest.raises(EmptySegmentationError):
        centroids_from_labels(LabelVolume(np.zeros((2, 2, 2), np.uint8), np.eye(4)))


def test_uniform_weights_exact():
    pts = centroids_from_labels(LabelVolume(_phantom(3), np.eye(4)))
    assert pts.weight_mode is WeightMode.UNIFORM
    assert np.all(pts.weights == 1.0 / 3)


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.floats(-1e3, 1e3, allow_nan=False)] * 3))
def test_translation_equivariance(v):
    v = np.array(v)
    affine = np.diag([1.5, 2.0, 0.5, 1.0])
    shifted = affine.copy()
    shifted[:3, 3] += v
    data = _phantom(4)
    a = centroids_from_labels(LabelVolume(data, affine))
    b = centroids_from_labels(LabelVolume(data, shifted))
    np.testing.assert_allclose(b.points, a.points + v, rtol=0, atol=1e-12 * (1 + np.abs(v).max()))


def test_centroids_deterministic_and_order_independent():
    data = _phantom(5)
    a = centroids_from_labels(LabelVolume(data, np.eye(4)))
    b = centroids_from_labels(LabelVolume(np.asfortranarray(data), np.eye(4)))
    assert a.points.tobytes() == b.points.tobytes()
    # reversing the raster along an axis while flipping the affine gives the same world centroids
    flip = np.eye(4)
    flip[0, 0], flip[0, 3] = -1.0, data.shape[0] - 1
    c = centroids_from_labels(LabelVolume(data[::-1].copy(), flip))
    np.testing.assert_allclose(c.points, a.points, atol=1e-12)


# --- point set validation ---------------------------------------------------------


def test_point_set_invariants():
    s = _set([3, 1, 2], np.zeros((3, 3)), [1.0, 1.0, 2.0])
    assert s.weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        _set([1, 1, 2], np.zeros((3, 3)))
    with pytest.raises(InvalidArgumentError):
        _set([1, 2], [[0, 0, np.inf], [0, 0, 0]])
    with pytest.raises(InvalidArgumentError):
        _set([1, 2], np.zeros((2, 3)), [-1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        _set([1, 2], np.zeros((2, 4)))


# --- pairing -----------------------------------------------------------------------


def _random_pts(labels, seed=0):
    return np.random.default_rng(seed).normal(scale=10, size=(len(labels), 3))


def test_pair_intersection():
    ref = _set([1, 2, 3, 4, 5], _random_pts(range(5)))
    mov = _set([6, 5, 4, 3, 2], _random_pts(range(5), 1))
    p = pair_by_label(ref, mov)
    assert p.common_labels.tolist() == [2, 3, 4, 5]
    np.testing.assert_array_equal(p.x, ref.points[1:])
    np.testing.assert_array_equal(p.y, mov.points[[4, 3, 2, 1]])
    assert np.all(p.weights == 0.25)
    assert p.reference.labels.tolist() == p.moving.labels.tolist()


def test_pair_identical_sets_keeps_everything():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    ref = _set([1, 2, 3, 4], _random_pts(range(4)), w)
    p = pair_by_label(ref, ref)
    np.testing.assert_array_equal(p.x, ref.points)
    np.testing.assert_allclose(p.weights, w, rtol=1e-15)


def test_pair_renormalises_size_weights():
    ref = _set([1, 2, 3, 4, 5], _random_pts(range(5)), [1, 1, 1, 1, 4])
    mov = _set([1, 2, 3, 4], _random_pts(range(4), 1), [1, 2, 3, 4])
    p = pair_by_label(ref, mov)
    np.testing.assert_allclose(p.weights, [0.25] * 4)
    np.testing.assert_allclose(pair_by_label(ref, mov, "moving").weights, [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(pair_by_label(ref, mov, "average").weights, [0.175, 0.225, 0.275, 0.325])
    with pytest.raises(InvalidArgumentError):
        pair_by_label(ref, mov, "median")


def test_pair_insufficient_and_degenerate():
    ref = _set([1, 2, 3, 4], _random_pts(range(4)))
    mov = _set([2, 3, 4, 9], _random_pts(range(4), 1))
    with pytest.raises(InsufficientCorrespondenceError):
        pair_by_label(ref, mov)
    flat = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [3, 2, 0]])
    with pytest.raises(DegenerateConfigurationError):
        pair_by_label(_set(range(5), flat), _set(range(5), flat))


def test_pair_2d_needs_three():
    ref = _set([1, 2, 3], [[0.0, 0], [1, 0], [0, 1]])
    assert pair_by_label(ref, ref).dim == 2
    with pytest.raises(InsufficientCorrespondenceError):
        pair_by_label(ref, _set([1, 2], [[0.0, 0], [1, 0]]))


# --- CSV ---------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    pts = centroids_from_labels(LabelVolume(_phantom(6), np.diag([1.1, 1.3, 0.7, 1.0])), weight_mode="size_proportional")
    write_centroids_csv(pts, tmp_path / "c.csv")
    back = read_centroids_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.labels, pts.labels)
    np.testing.assert_array_equal(back.points, pts.points)
    np.testing.assert_allclose(back.weights, pts.weights, rtol=1e-15)


def test_csv_without_weights_is_uniform(tmp_path):
    (tmp_path / "c.csv").write_text("label,x,y,z\n4,1,2,3\n5,4,5,6\n9,0.5,0,1\n")
    pts = read_centroids_csv(tmp_path / "c.csv")
    assert pts.weight_mode is WeightMode.UNIFORM
    assert np.all(pts.weights == 1 / 3)
    np.testing.assert_array_equal(pts.points[2], [0.5, 0, 1])


def test_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_centroids_csv(tmp_path / "nope.csv")
    (tmp_path / "h.csv").write_text("id,x,y,z\n1,0,0,0\n")
    with pytest.raises(InvalidArgumentError):
        read_centroids_csv(tmp_path / "h.csv")
    (tmp_path / "r.csv").write_text("label,x,y,z\n1,zero,0,0\n")
    with pytest.raises(InvalidArgumentError):
        read_centroids_csv(tmp_path / "r.csv")
    (tmp_path / "e.csv").write_text("label,x,y,z\n")
    with pytest.raises(EmptySegmentationError):
        read_centroids_csv(tmp_path / "e.csv")
