"""CorAl alignment quality: joint versus separate differential entropy.

Every point of a pair of clouds gets a radius neighborhood twice, once among
the points of its own cloud and once in the union of both clouds.  The log
determinant of each neighborhood's sample covariance is the point's
differential entropy.  Joining two aligned clouds leaves those entropies
roughly unchanged; a misaligned pair blurs surfaces and raises the joint
entropy, so ``Q = H_joint - H_sep`` grows with the alignment error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .cloud import Label, PointCloud, join
from .errors import (
    DegenerateNeighborhoodError,
    InsufficientDataError,
    InvalidParameterError,
    NumericalDegeneracyError,
)
from .spatial import SpatialIndex

TWO_PI_E = 2.0 * math.pi * math.e


class Aggregation(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"


class Status(str, Enum):
    MEASURED = "measured"
    INSUFFICIENT_OVERLAP = "insufficient_overlap"


@dataclass(frozen=True)
class EntropyParams:
    """Neighborhood and aggregation settings.

    With ``alpha == 0`` every point uses the fixed radius ``r_min``;
    otherwise the radius grows with range as ``d * sin(alpha)`` and is
    clamped to ``[r_min, r_max]``.
    """

    r_min: float = 0.3
    r_max: float = 0.3
    alpha: float = 0.0
    epsilon: float = 0.0
    e_reject: float = 0.0
    min_overlap: float = 0.10
    aggregation: Aggregation = Aggregation.MEAN
    min_neighbors: int = 5

    def __post_init__(self):
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        checks = [
            (0 < self.r_min <= self.r_max, "need 0 < r_min <= r_max"),
            (0 <= self.alpha < math.pi / 2, "need 0 <= alpha < pi/2"),
            (self.epsilon >= 0, "need epsilon >= 0"),
            (0 <= self.e_reject < 1, "need 0 <= e_reject < 1"),
            (0 <= self.min_overlap <= 1, "need 0 <= min_overlap <= 1"),
            (int(self.min_neighbors) == self.min_neighbors and self.min_neighbors >= 4,
             "need integer min_neighbors >= 4"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidParameterError(msg)
        object.__setattr__(self, "min_neighbors", int(self.min_neighbors))

    @classmethod
    def fixed(cls, r: float, **kw) -> "EntropyParams":
        return cls(r_min=r, r_max=r, alpha=0.0, **kw)

    def with_(self, **kw) -> "EntropyParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class CovarianceSummary:
    covariance: np.ndarray
    determinant: float
    eigenvalues: np.ndarray  # descending
    neighbor_count: int


def sample_covariance(neighbors) -> CovarianceSummary:
    """Unbiased (n - 1) sample covariance of a neighborhood, two-pass."""
    pts = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 2:
        raise DegenerateNeighborhoodError(f"need at least 2 neighbors, got {n}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    eig = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
    return CovarianceSummary(cov, float(np.prod(eig)), eig, n)


def covariance_determinants(covs: np.ndarray) -> np.ndarray:
    """Batched determinant of symmetric PSD matrices, clamped at zero.

    A negative determinant of a PSD matrix can only come from an eigenvalue
    rounded below zero, so clamping the product equals clamping the
    eigenvalues first.  The cofactor expansion avoids a batched eigensolve.
    """
    c = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
    a, b, d = c[:, 0, 0], c[:, 0, 1], c[:, 0, 2]
    e, f, i = c[:, 1, 1], c[:, 1, 2], c[:, 2, 2]
    det = a * (e * i - f * f) - b * (b * i - f * d) + d * (b * f - e * d)
    return np.maximum(det, 0.0)


def point_entropy(det, epsilon: float = 0.0):
    """``0.5 * ln(2*pi*e*det + epsilon)`` in nats; ``-inf`` when the argument is 0."""
    d = np.asarray(det, dtype=np.float64)
    if np.any(d < 0):
        raise NumericalDegeneracyError("negative covariance determinant")
    with np.errstate(divide="ignore"):
        h = 0.5 * np.log(TWO_PI_E * d + epsilon)
    return float(h) if h.ndim == 0 else h


def dynamic_radius(p, sensor_origin, params: EntropyParams):
    """Range-adaptive neighborhood radius; accepts one point or an (n, 3) array."""
    p = np.asarray(p, dtype=np.float64)
    if params.alpha == 0.0:
        r = np.full(p.shape[:-1], params.r_min)
    else:
        d = np.linalg.norm(p - np.asarray(sensor_origin, dtype=np.float64), axis=-1)
        r = np.clip(d * math.sin(params.alpha), params.r_min, params.r_max)
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class PerPointEntropy:
    """Per-point results for the overlapping points of a joint cloud.

    ``index`` refers to rows of the joint cloud (``a`` first, then ``b``).
    ``valid`` marks points with enough separate neighbors and finite entropy;
    ``used`` is the subset that survived outlier rejection.
    """

    index: np.ndarray
    h_sep: np.ndarray
    h_joint: np.ndarray
    q: np.ndarray
    valid: np.ndarray
    used: np.ndarray
    radius: np.ndarray
    n_sep: np.ndarray
    n_joint: np.ndarray

    def __len__(self) -> int:
        return len(self.index)


@dataclass(frozen=True)
class QualityResult:
    h_sep: float
    h_joint: float
    q: float
    overlap_ratio: float
    status: Status
    per_point: PerPointEntropy | None = None
    n_used: int = 0
    params: EntropyParams | None = field(default=None, repr=False)

    @property
    def measured(self) -> bool:
        return self.status is Status.MEASURED


class _JointSetup:
    """Joint cloud, per-point radii and grid index shared by overlap and entropy."""

    def __init__(self, a: PointCloud, b: PointCloud, params: EntropyParams):
        if len(a) == 0 or len(b) == 0:
            raise InvalidParameterError("both clouds must be non-empty")
        self.n_a, self.n_b = len(a), len(b)
        self.joint = join(a.with_label(Label.A), b.with_label(Label.B))
        origins = np.empty_like(self.joint.points)
        origins[: self.n_a] = a.sensor_origin
        origins[self.n_a:] = b.sensor_origin
        self.radii = np.asarray(dynamic_radius(self.joint.points, origins, params))
        self.index = SpatialIndex(self.joint, cell=params.r_max / 2)

    def overlap_mask(self) -> np.ndarray:
        return self.index.has_cross_neighbor(self.joint.points, self.radii, self.joint.labels)


def overlap_ratio(a: PointCloud, b: PointCloud, params: EntropyParams) -> float:
    """Fraction of ``a ∪ b`` with a neighbor from the other cloud inside its radius."""
    setup = _JointSetup(a, b, params)
    return float(np.count_nonzero(setup.overlap_mask())) / (setup.n_a + setup.n_b)


def entropies_from_stats(stats, epsilon: float, slot: int) -> np.ndarray:
    """Per-query entropy for one neighborhood slot; NaN where n < 2."""
    covs = stats.covariances(slot)
    bad = stats.counts[:, slot] < 2
    covs[bad] = 0.0
    h = np.asarray(point_entropy(covariance_determinants(covs), epsilon))
    h[bad] = np.nan
    return h


RANK_TIE_TOL = 1e-9


def _rank_lowest(values: np.ndarray) -> np.ndarray:
    """Ascending order where values within ``RANK_TIE_TOL`` nats count as tied.

    Points sharing a neighborhood have equal entropies up to rounding, and
    rounding changes under a rigid motion; tied runs fall back to index order.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    group = np.concatenate([[0], np.cumsum(np.diff(v) > RANK_TIE_TOL)])
    return order[np.lexsort((order, group))]


def _lower_median(x: np.ndarray) -> float:
    s = np.sort(x, kind="stable")
    return float(s[(len(s) - 1) // 2])


def _mean(x: np.ndarray) -> float:
    # exactly rounded, so independent of summation order
    return math.fsum(x.tolist()) / len(x)


def coral_quality(a: PointCloud, b: PointCloud, params: EntropyParams) -> QualityResult:
    """Alignment quality of two clouds given in a common world frame."""
    setup = _JointSetup(a, b, params)
    overlapping = setup.overlap_mask()
    ratio = float(np.count_nonzero(overlapping)) / (setup.n_a + setup.n_b)
    if ratio < params.min_overlap:
        return QualityResult(math.nan, math.nan, math.nan, ratio,
                             Status.INSUFFICIENT_OVERLAP, params=params)

    idx = np.flatnonzero(overlapping)
    pts = setup.joint.points[idx]
    radii = setup.radii[idx]
    stats = setup.index.neighborhood_stats(pts, radii, setup.joint.labels[idx])
    n_sep = stats.counts[:, 0]
    h_sep = entropies_from_stats(stats, params.epsilon, 0)
    h_joint = entropies_from_stats(stats, params.epsilon, 1)
    valid = (n_sep >= params.min_neighbors) & np.isfinite(h_sep) & np.isfinite(h_joint)

    used = valid.copy()
    valid_idx = np.flatnonzero(valid)
    n_drop = int(math.floor(params.e_reject * len(valid_idx)))
    if n_drop:
        ranked = valid_idx[_rank_lowest(h_sep[valid_idx])]
        used[ranked[:n_drop]] = False
    n_used = int(np.count_nonzero(used))
    if n_used == 0:
        raise InsufficientDataError("no points left after overlap, neighbor and rejection filters")

    with np.errstate(invalid="ignore"):
        q_pt = h_joint - h_sep
    per_point = PerPointEntropy(idx, h_sep, h_joint, q_pt, valid, used, radii,
                                n_sep, stats.counts[:, 1])
    if params.aggregation is Aggregation.MEAN:
        H_sep, H_joint = _mean(h_sep[used]), _mean(h_joint[used])
    else:
        H_sep, H_joint = _lower_median(h_sep[used]), _lower_median(h_joint[used])
    return QualityResult(H_sep, H_joint, H_joint - H_sep, ratio, Status.MEASURED,
                         per_point, n_used, params)


def extract_features_coral(result: QualityResult) -> tuple[float, float]:
    """Classifier inputs ``(x1, x2) = (H_joint, H_sep)``."""
    if not result.measured:
        raise InsufficientDataError("insufficient overlap: classify as misaligned without the model")
    return result.h_joint, result.h_sep


def export_per_point(result: QualityResult, a: PointCloud, b: PointCloud, path) -> int:
    """Write ``x y z q valid`` lines for every overlapping point; returns the line count.

    ``valid`` is 1 for points that entered the aggregate.  Points without a
    usable entropy get ``q = 0``.
    """
    if result.per_point is None:
        raise InsufficientDataError("no per-point data (insufficient overlap)")
    pp = result.per_point
    xyz = np.concatenate([a.points, b.points])[pp.index]
    q = np.where(pp.valid, pp.q, 0.0)
    with open(Path(path), "w") as fh:
        for (x, y, z), qk, u in zip(xyz.tolist(), q.tolist(), pp.used.tolist()):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {qk:.6f} {int(u)}\n")
    return len(pp)
