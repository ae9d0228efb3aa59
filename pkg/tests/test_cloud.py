import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coral.cloud import Label, PointCloud, RigidTransform, apply_transform, join, voxel_downsample
from coral.errors import InvalidParameterError, InvalidTransformError

from oracles import bucket_centroids

coords = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
point_arrays = st.integers(1, 60).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coords))


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def test_identity_transform_leaves_cloud_unchanged(rng):
    c = PointCloud(rng.normal(size=(50, 3)), (1, 2, 3))
    out = apply_transform(c, RigidTransform.identity())
    assert np.array_equal(out.points, c.points)
    assert np.array_equal(out.sensor_origin, c.sensor_origin)


def test_pure_translation():
    c = PointCloud([[1.0, 0.0, 0.0]])
    out = apply_transform(c, RigidTransform.translation_only([0, 0, 1]))
    assert out.points.tolist() == [[1.0, 0.0, 1.0]]
    assert out.sensor_origin.tolist() == [0.0, 0.0, 1.0]


def test_quarter_turn_matches_hand_formula(rng):
    pts = rng.normal(size=(100, 3))
    out = apply_transform(PointCloud(pts), RigidTransform.about_z(math.pi / 2))
    expected = np.array([[-y, x, z] for x, y, z in pts])
    assert np.allclose(out.points, expected, atol=1e-12)


def test_non_orthonormal_rotation_rejected():
    with pytest.raises(InvalidTransformError):
        RigidTransform(np.diag([1.0, 1.0, 1.001]))
    with pytest.raises(InvalidTransformError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))


def test_compose_and_inverse(rng):
    t1 = RigidTransform(random_rotation(rng), rng.normal(size=3))
    t2 = RigidTransform(random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(10, 3))
    assert np.allclose(t1.compose(t2).apply(p), t1.apply(t2.apply(p)))
    assert np.allclose(t1.inverse().apply(t1.apply(p)), p)
    assert np.allclose(RigidTransform.from_matrix(t1.as_matrix()).apply(p), t1.apply(p))


def test_about_z_fixes_pivot():
    t = RigidTransform.about_z(0.3, pivot=(2.0, -1.0, 5.0))
    assert np.allclose(t.apply([2.0, -1.0, 7.0]), [2.0, -1.0, 7.0])


@settings(max_examples=60, deadline=None)
@given(point_arrays, st.integers(0, 2**32 - 1))
def test_transform_preserves_distances(pts, seed):
    rng = np.random.default_rng(seed)
    t = RigidTransform(random_rotation(rng), rng.uniform(-100, 100, size=3))
    out = apply_transform(PointCloud(pts), t).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.max(np.abs(d0 - d1), initial=0.0) <= 1e-9


def test_cloud_is_immutable(rng):
    c = PointCloud(rng.normal(size=(5, 3)))
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_non_finite_points_rejected():
    with pytest.raises(InvalidParameterError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_downsample_duplicate_collapse():
    out = voxel_downsample(PointCloud([[0.01, 0.02, 0.03]] * 2), 0.08)
    assert out.points.tolist() == [[0.01, 0.02, 0.03]]


def test_downsample_distinct_cells():
    out = voxel_downsample(PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], (1, 1, 1)), 0.08)
    assert len(out) == 2
    assert out.sensor_origin.tolist() == [1.0, 1.0, 1.0]


def test_downsample_matches_bucketing_oracle(rng):
    pts = rng.uniform(0, 1, size=(1000, 3))
    out = voxel_downsample(PointCloud(pts), 0.5)
    ref, _ = bucket_centroids(pts, 0.5)
    assert len(out) == len(ref) <= 8
    got = {tuple(int(math.floor(c / 0.5)) for c in p): p for p in out.points}
    assert got.keys() == ref.keys()
    for k in ref:
        assert np.allclose(got[k], ref[k], atol=1e-12)


def test_downsample_rejects_bad_cell():
    with pytest.raises(InvalidParameterError):
        voxel_downsample(PointCloud([[0.0, 0.0, 0.0]]), 0.0)


@settings(max_examples=80, deadline=None)
@given(point_arrays, st.sampled_from([0.01, 0.08, 0.3, 1.0, 7.0]))
def test_downsample_idempotent(pts, cell):
    once = voxel_downsample(PointCloud(pts), cell)
    twice = voxel_downsample(once, cell)
    assert np.array_equal(once.points, twice.points)


def test_join_cardinality_and_labels(rng):
    a = PointCloud(rng.normal(size=(10, 3)), label=Label.A)
    b = PointCloud(rng.normal(size=(20, 3)), label=Label.B)
    j = join(a, b)
    assert len(j) == 30
    assert np.array_equal(j.points[j.labels == Label.A], a.points)
    assert np.array_equal(j.points[j.labels == Label.B], b.points)


def test_join_keeps_duplicates(rng):
    pts = rng.normal(size=(15, 3))
    j = join(PointCloud(pts, label=Label.A), PointCloud(pts, label=Label.B))
    assert len(j) == 30
    for p in pts:
        hits = np.flatnonzero(np.all(j.points == p, axis=1))
        assert sorted(j.labels[hits].tolist()) == [0, 1]


@settings(max_examples=50, deadline=None)
@given(point_arrays, point_arrays)
def test_join_multiset(pa, pb):
    j = join(PointCloud(pa, label=Label.A), PointCloud(pb, label=Label.B))
    assert sorted(map(tuple, j.points.tolist())) == sorted(map(tuple, pa.tolist() + pb.tolist()))
