import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from coral.cloud import Label, PointCloud, RigidTransform, apply_transform
from coral.entropy import (Aggregation, EntropyParams, Status, coral_quality, covariance_determinants,
                           dynamic_radius, entropies_from_stats, export_per_point,
                           extract_features_coral, overlap_ratio, point_entropy, sample_covariance)
from coral.errors import (DegenerateNeighborhoodError, InsufficientDataError,
                          InvalidParameterError, NumericalDegeneracyError)
from coral.harness.synth import synth_scene

from oracles import brute_overlap, brute_quality, two_pass_covariance


def blob(rng, n=500, shift=(0.0, 0.0, 0.0), label=Label.A, scale=1.0):
    return PointCloud(rng.uniform(0, scale, size=(n, 3)) + shift, label=label)


# -- params ----------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(r_min=0.0), dict(r_min=0.5, r_max=0.4), dict(alpha=-0.1), dict(alpha=math.pi / 2),
    dict(epsilon=-1e-9), dict(e_reject=1.0), dict(min_overlap=1.5), dict(min_neighbors=3),
])
def test_params_validated(kw):
    with pytest.raises(InvalidParameterError):
        EntropyParams(**kw)


# -- covariance ------------------------------------------------------------

def test_covariance_cross_shape():
    s = sample_covariance([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]])
    assert np.allclose(s.covariance, np.diag([2 / 3, 2 / 3, 0.0]), atol=1e-15)
    assert s.determinant == 0.0


def test_covariance_identical_points():
    s = sample_covariance([[0.3, -2.0, 7.0]] * 9)
    assert np.all(s.covariance == 0.0)
    assert s.determinant == 0.0


def test_covariance_matches_independent_routine(rng):
    pts = rng.normal(size=(200, 3)) * [1.0, 0.5, 0.1] + 40.0
    s = sample_covariance(pts)
    assert np.allclose(s.covariance, two_pass_covariance(pts.tolist()), atol=1e-10, rtol=0)


def test_covariance_needs_two_points():
    with pytest.raises(DegenerateNeighborhoodError):
        sample_covariance([[0, 0, 0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_covariance_invariants(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)) * rng.uniform(0.01, 3, size=3)
    s = sample_covariance(pts)
    assert np.max(np.abs(s.covariance - s.covariance.T)) <= 1e-12
    assert np.all(s.eigenvalues >= -1e-12)
    prod = float(np.prod(s.eigenvalues))
    assert abs(s.determinant - prod) <= 1e-6 * max(abs(prod), 1e-300)
    # the batched cofactor determinant agrees with the eigenvalue product
    det = covariance_determinants(s.covariance)[0]
    assert abs(det - prod) <= 1e-6 * max(prod, 1e-300) + 1e-15 * np.max(s.eigenvalues) ** 3


# -- point entropy ---------------------------------------------------------

def test_point_entropy_values():
    assert abs(point_entropy(1 / (2 * math.pi * math.e), 0.0)) <= 1e-12
    assert abs(point_entropy(0.0, 1e-8) - 0.5 * math.log(1e-8)) <= 1e-12
    assert abs(point_entropy(1.0, 0.0) - 1.4189385332046727) <= 1e-12
    assert point_entropy(0.0, 0.0) == -math.inf


def test_point_entropy_negative_det():
    with pytest.raises(NumericalDegeneracyError):
        point_entropy(-1e-3)


# -- dynamic radius --------------------------------------------------------

def test_dynamic_radius():
    p = EntropyParams(r_min=0.2, r_max=1.0, alpha=math.radians(0.92))
    assert dynamic_radius([0, 0, 0], [0, 0, 0], p) == 0.2
    assert dynamic_radius([10, 0, 0], [0, 0, 0], p) == 0.2
    assert dynamic_radius([80, 0, 0], [0, 0, 0], p) == 1.0
    assert abs(dynamic_radius([0, 40, 0], [0, 0, 0], p) - 40 * math.sin(math.radians(0.92))) < 1e-12
    assert dynamic_radius([500, 0, 0], [0, 0, 0], EntropyParams(r_min=0.2, r_max=1.0)) == 0.2


# -- overlap ---------------------------------------------------------------

def test_overlap_identical_and_disjoint(backend, rng):
    a = blob(rng)
    assert overlap_ratio(a, a, EntropyParams.fixed(0.3)) == 1.0
    far = blob(rng, shift=(100.0, 0.0, 0.0))
    assert overlap_ratio(a, far, EntropyParams.fixed(0.3)) == 0.0


def test_overlap_half_planes_matches_brute_force(backend, rng):
    a = np.c_[rng.uniform(0, 1, size=(1500, 2)), np.zeros(1500)]
    b = np.c_[rng.uniform(0, 1, size=(1500, 2)) + [0.5, 0.0], np.zeros(1500)]
    got = overlap_ratio(PointCloud(a), PointCloud(b), EntropyParams.fixed(0.3))
    assert got == brute_overlap(a, b, 0.3).sum() / 3000


def test_overlap_dynamic_radius_matches_brute_force(backend, rng):
    a = rng.uniform(0, 20, size=(800, 3)) * [1, 1, 0.1]
    b = rng.uniform(0, 20, size=(800, 3)) * [1, 1, 0.1] + [3.0, 0, 0]
    oa, ob = np.array([0.0, 0, 1]), np.array([5.0, 5, 1])
    p = EntropyParams(r_min=0.3, r_max=1.2, alpha=math.radians(3.0))
    got = overlap_ratio(PointCloud(a, oa), PointCloud(b, ob), p)
    want = brute_overlap(a, b, 0.3, 1.2, math.radians(3.0), oa, ob).sum() / 1600
    assert got == want


# -- quality ---------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(), dict(e_reject=0.2), dict(epsilon=1e-8), dict(e_reject=0.35, epsilon=1e-6),
])
def test_quality_matches_brute_force(backend, rng, kw):
    a = rng.uniform(0, 1.5, size=(500, 3))
    b = rng.uniform(0, 1.5, size=(450, 3)) + [0.6, 0.1, 0.0]
    res = coral_quality(PointCloud(a), PointCloud(b), EntropyParams.fixed(0.3, **kw))
    assert res.status is Status.MEASURED
    assert abs(res.q - brute_quality(a, b, 0.3, **kw)) <= 1e-9


def test_median_matches_brute_force(backend, rng):
    a = rng.uniform(0, 1.5, size=(400, 3))
    b = rng.uniform(0, 1.5, size=(401, 3)) + [0.3, 0.0, 0.0]
    p = EntropyParams.fixed(0.3, e_reject=0.1, aggregation=Aggregation.MEDIAN)
    res = coral_quality(PointCloud(a), PointCloud(b), p)
    assert abs(res.q - brute_quality(a, b, 0.3, e_reject=0.1, median=True)) <= 1e-9


def test_insufficient_overlap(backend, rng):
    res = coral_quality(blob(rng), blob(rng, shift=(50.0, 0, 0)), EntropyParams.fixed(0.3))
    assert res.status is Status.INSUFFICIENT_OVERLAP
    assert res.overlap_ratio == 0.0
    with pytest.raises(InsufficientDataError):
        extract_features_coral(res)


def test_overlap_below_ten_percent_forced(backend, rng):
    a = np.c_[rng.uniform(0, 1, size=(2000, 2)), np.zeros(2000)]
    b = a + [0.95, 0.0, 0.0]
    res = coral_quality(PointCloud(a), PointCloud(b), EntropyParams.fixed(0.02))
    assert res.overlap_ratio < 0.10
    assert res.status is Status.INSUFFICIENT_OVERLAP


def test_no_valid_points_raises(backend):
    a = PointCloud([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]])
    b = PointCloud([[0.05, 0.0, 0.0]])
    with pytest.raises(InsufficientDataError):
        coral_quality(a, b, EntropyParams.fixed(0.3))


def test_empty_cloud_rejected():
    with pytest.raises(InvalidParameterError):
        coral_quality(PointCloud(np.zeros((0, 3))), PointCloud([[0, 0, 0]]), EntropyParams())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(100, 600), st.floats(0.2, 0.6))
def test_duplication_never_increases_entropy(seed, n, r):
    rng = np.random.default_rng(seed)
    a = PointCloud(rng.normal(size=(n, 3)) * rng.uniform(0.2, 1.0, size=3))
    try:
        res = coral_quality(a, a, EntropyParams.fixed(r))
    except InsufficientDataError:
        assume(False)
    assert res.q <= 0.0
    assert np.all(res.per_point.q[res.per_point.used] <= 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5), st.floats(0.0, 1e-4))
def test_mean_q_equals_mean_of_per_point(seed, e_reject, eps):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(300, 3))
    b = rng.uniform(0, 1, size=(300, 3)) + rng.uniform(-0.2, 0.2, size=3)
    res = coral_quality(PointCloud(a), PointCloud(b),
                        EntropyParams.fixed(0.3, e_reject=e_reject, epsilon=eps))
    pp = res.per_point
    assert abs(res.q - np.mean(pp.q[pp.used])) <= 1e-9
    assert abs(res.q - (res.h_joint - res.h_sep)) <= 1e-12
    assert 0.0 <= res.overlap_ratio <= 1.0
    assert np.all(np.isfinite(pp.h_sep[pp.valid])) and np.all(np.isfinite(pp.h_joint[pp.valid]))
    assert np.max(np.abs(pp.q[pp.valid] - (pp.h_joint - pp.h_sep)[pp.valid]), initial=0) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9))
def test_rejection_count_and_order(seed, e_reject):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(250, 3))
    b = rng.uniform(0, 1, size=(250, 3)) + [0.1, 0.0, 0.0]
    res = coral_quality(PointCloud(a), PointCloud(b), EntropyParams.fixed(0.3, e_reject=e_reject))
    pp = res.per_point
    n_valid = int(pp.valid.sum())
    removed = pp.valid & ~pp.used
    assert removed.sum() == math.floor(e_reject * n_valid)
    if removed.any():
        assert pp.h_sep[removed].max() <= pp.h_sep[pp.used].min()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_q_invariant_to_entropy_offset(seed, c):
    # adding c to every per-point entropy before aggregation leaves Q unchanged
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(250, 3))
    b = rng.uniform(0, 1, size=(250, 3)) + [0.2, 0.0, 0.0]
    res = coral_quality(PointCloud(a), PointCloud(b), EntropyParams.fixed(0.3, e_reject=0.2))
    pp = res.per_point
    shifted = np.mean(pp.h_joint[pp.used] + c) - np.mean(pp.h_sep[pp.used] + c)
    assert abs(shifted - res.q) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    a = PointCloud(rng.uniform(0, 8, size=(600, 3)) * [1, 1, 0.2], (0, 0, 1))
    b = PointCloud(rng.uniform(0, 8, size=(600, 3)) * [1, 1, 0.2] + [0.5, 0, 0], (3, 1, 1))
    p = EntropyParams(r_min=0.5, r_max=1.5, alpha=math.radians(8.0), e_reject=0.1)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                  [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                  [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    t = RigidTransform(R, rng.uniform(-30, 30, size=3))
    q0 = coral_quality(a, b, p).q
    q1 = coral_quality(apply_transform(a, t), apply_transform(b, t), p).q
    assert abs(q0 - q1) <= 1e-6


def test_duplicated_features_ordered(backend, rng):
    a = blob(rng, 800)
    x1, x2 = extract_features_coral(coral_quality(a, a, EntropyParams.fixed(0.3)))
    assert x1 <= x2


def test_plane_offset_raises_q(backend):
    pair = synth_scene("plane-pair", density=10000, extent=1.0, noise=0.005, seed=0)
    p = EntropyParams.fixed(0.3)
    q0 = coral_quality(pair.cloud_a, pair.cloud_b, p).q
    shifted = apply_transform(pair.cloud_b, RigidTransform.translation_only([0, 0, 0.1]))
    assert coral_quality(pair.cloud_a, shifted, p).q > q0


def test_entropies_from_stats_marks_small_neighborhoods(rng):
    from coral.spatial import SpatialIndex
    pts = np.array([[0.0, 0, 0], [5.0, 0, 0], [5.1, 0, 0]])
    stats = SpatialIndex(pts).neighborhood_stats(pts, 0.3, np.zeros(3, np.uint8))
    h = entropies_from_stats(stats, 1e-8, 1)
    assert np.isnan(h[0]) and np.isfinite(h[1])


def test_export_per_point(tmp_path, rng):
    a = blob(rng, 300, label=Label.A)
    b = blob(rng, 300, shift=(0.5, 0, 0), label=Label.B)
    res = coral_quality(a, b, EntropyParams.fixed(0.3, e_reject=0.2))
    path = tmp_path / "q.txt"
    n = export_per_point(res, a, b, path)
    lines = path.read_text().splitlines()
    assert n == len(lines) == len(res.per_point)
    fields = [ln.split() for ln in lines]
    assert all(len(f) == 5 and all(len(v.split(".")[1]) == 6 for v in f[:4]) for f in fields)
    assert sum(int(f[4]) for f in fields) == res.n_used
    pp = res.per_point
    k = int(np.flatnonzero(pp.used)[0])
    assert abs(float(fields[k][3]) - pp.q[k]) <= 5e-7
