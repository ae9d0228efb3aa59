"""Reference measures: mean map entropy and point-to-distribution NDT.

The NDT model voxelizes one cloud and fits a Gaussian to every voxel with
enough points.  Points of the other cloud are scored by the density of the
nearest Gaussian (by mean distance) among the occupied voxels in their
27-neighborhood; points with no occupied voxel nearby do not overlap and are
left out of the average.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit, prange
from .cloud import PointCloud
from .entropy import TWO_PI_E, entropies_from_stats, point_entropy
from .errors import InsufficientDataError, InvalidParameterError
from .spatial import SpatialIndex

MIN_CELL_POINTS = 6
EIG_FLOOR_RATIO = 1e-3
EIG_FLOOR_ABS = 1e-12

_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)


@dataclass(frozen=True)
class NdtCell:
    mean: np.ndarray
    covariance: np.ndarray
    point_count: int
    grid_coordinates: tuple[int, int, int]


def regularize_covariance(cov: np.ndarray) -> np.ndarray:
    """Floor eigenvalues at ``1e-3 * largest`` so planar and linear cells stay invertible."""
    cov = np.asarray(cov, dtype=np.float64)
    w, V = np.linalg.eigh(cov)
    floor = np.maximum(EIG_FLOOR_RATIO * w[..., -1:], EIG_FLOOR_ABS)
    w = np.maximum(w, floor)
    return np.einsum("...ij,...j,...kj->...ik", V, w, V)


class NdtGrid:
    """Occupied NDT cells in sorted-key layout for vectorized lookup."""

    def __init__(self, voxel_size: float, coords, means, covariances, counts):
        if not voxel_size > 0:
            raise InvalidParameterError("voxel size must be > 0")
        self.voxel_size = float(voxel_size)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if len(coords) == 0:
            raise InvalidParameterError("NDT grid has no occupied cells")
        # voxels adjacent to an occupied one may query, and their own 27
        # neighbors must still have valid keys: pad the key box by two
        self.lo = coords.min(axis=0) - 2
        self.dims = coords.max(axis=0) - self.lo + 3
        keys = self._keys(coords)
        order = np.argsort(keys, kind="stable")
        self.keys = np.ascontiguousarray(keys[order])
        self.coords = coords[order]
        self.means = np.ascontiguousarray(np.asarray(means, dtype=np.float64).reshape(-1, 3)[order])
        self.covariances = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)[order]
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1)[order]
        self.inverses = np.linalg.inv(self.covariances)
        self.determinants = np.prod(np.linalg.eigvalsh(self.covariances), axis=1)
        self.norms = 1.0 / np.sqrt((2.0 * math.pi) ** 3 * self.determinants)

    @classmethod
    def from_cells(cls, voxel_size: float, cells: list[NdtCell]) -> "NdtGrid":
        return cls(voxel_size, [c.grid_coordinates for c in cells], [c.mean for c in cells],
                   [c.covariance for c in cells], [c.point_count for c in cells])

    def _keys(self, ijk: np.ndarray) -> np.ndarray:
        rel = ijk - self.lo
        return (rel[..., 0] * self.dims[1] + rel[..., 1]) * self.dims[2] + rel[..., 2]

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def cells(self) -> dict[tuple[int, int, int], NdtCell]:
        return {tuple(int(v) for v in c): NdtCell(m, S, int(n), tuple(int(v) for v in c))
                for c, m, S, n in zip(self.coords, self.means, self.covariances, self.counts)}

    def cell_entropies(self, epsilon: float = 0.0) -> np.ndarray:
        return np.asarray(point_entropy(self.determinants, epsilon))

    def assign(self, points: np.ndarray) -> np.ndarray:
        """Index of the nearest occupied cell in each point's 27-neighborhood, or -1."""
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        ijk = np.floor(pts / self.voxel_size).astype(np.int64)
        inside = np.all((ijk > self.lo) & (ijk < self.lo + self.dims - 1), axis=1)
        centre = np.where(inside, self._keys(ijk), -1)
        steps = np.array([self.dims[1] * self.dims[2], self.dims[2], 1], dtype=np.int64)
        deltas = np.ascontiguousarray(_OFFSETS @ steps)
        if _accel.USE_NUMBA:
            out = np.empty(len(pts), dtype=np.int64)
            _assign_numba(self.keys, self.means, deltas, pts, centre, out)
            return out
        cand = centre[:, None] + deltas[None, :]
        pos = np.minimum(np.searchsorted(self.keys, cand), len(self.keys) - 1)
        hit = (self.keys[pos] == cand) & (centre[:, None] >= 0)
        diff = self.means[pos] - pts[:, None, :]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        d2 = np.where(hit, d2, np.inf)
        best = np.argmin(d2, axis=1)
        return np.where(hit.any(axis=1), pos[np.arange(len(pts)), best], -1)

    def density(self, points: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """Normalized Gaussian density of each point under its assigned cell."""
        d = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.means[cells]
        m = np.einsum("ni,nij,nj->n", d, self.inverses[cells], d)
        return self.norms[cells] * np.exp(-0.5 * m)


@njit(parallel=True, cache=True)
def _assign_numba(keys, means, deltas, pts, centre, out):
    nk = keys.shape[0]
    for qi in prange(pts.shape[0]):
        best = -1
        best_d2 = np.inf
        if centre[qi] >= 0:
            for o in range(deltas.shape[0]):
                k = centre[qi] + deltas[o]
                pos = np.searchsorted(keys, k)
                if pos < nk and keys[pos] == k:
                    dx = means[pos, 0] - pts[qi, 0]
                    dy = means[pos, 1] - pts[qi, 1]
                    dz = means[pos, 2] - pts[qi, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d2:
                        best_d2 = d2
                        best = pos
        out[qi] = best


def build_ndt(cloud: PointCloud, v: float, min_cell_points: int = MIN_CELL_POINTS) -> NdtGrid:
    """Fit a Gaussian to every voxel of side ``v`` holding at least ``min_cell_points`` points."""
    if len(cloud) == 0:
        raise InvalidParameterError("cannot build NDT over an empty cloud")
    if not v > 0:
        raise InvalidParameterError("voxel size must be > 0")
    pts = cloud.points
    ijk = np.floor(pts / v).astype(np.int64)
    coords, inverse, counts = np.unique(ijk, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    keep = counts >= min_cell_points
    if not keep.any():
        raise InsufficientDataError(f"no voxel holds {min_cell_points} points")
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    means, covs = [], []
    for c in np.flatnonzero(keep):
        members = pts[order[starts[c]:starts[c] + counts[c]]]
        mu = members.mean(axis=0)
        d = members - mu
        means.append(mu)
        covs.append(d.T @ d / (len(members) - 1))
    covs = regularize_covariance(np.array(covs))
    return NdtGrid(v, coords[keep], np.array(means), covs, counts[keep])


@dataclass(frozen=True)
class NdtScore:
    s: float
    n: int
    no_overlap: bool
    assignment: np.ndarray   # cell index per query point, -1 when not overlapping
    densities: np.ndarray    # per overlapping point, in query order


def ndt_score(grid: NdtGrid, b: PointCloud) -> NdtScore:
    """Average Gaussian density of ``b``'s overlapping points under ``grid``."""
    cells = grid.assign(b.points)
    used = cells >= 0
    n = int(np.count_nonzero(used))
    if n == 0:
        return NdtScore(0.0, 0, True, cells, np.zeros(0))
    dens = grid.density(b.points[used], cells[used])
    return NdtScore(math.fsum(dens.tolist()) / n, n, False, cells, dens)


def extract_features_relndt(grid: NdtGrid, b: PointCloud, epsilon: float = 0.0):
    """``(x1, x2, no_overlap)``: NDT score and the mean entropy of the cells it used."""
    sc = ndt_score(grid, b)
    if sc.no_overlap:
        return 0.0, 0.0, True
    h = grid.cell_entropies(epsilon)[sc.assignment[sc.assignment >= 0]]
    return sc.s, math.fsum(h.tolist()) / sc.n, False


def mme(joint: PointCloud, r: float, min_neighbors: int = 5) -> float:
    """Mean map entropy: average per-point entropy of one cloud at fixed radius ``r``."""
    if not r > 0:
        raise InvalidParameterError("radius must be > 0")
    if len(joint) == 0:
        raise InsufficientDataError("empty cloud")
    # same grid layout as the joint index used for CorAl, so values agree bit for bit
    index = SpatialIndex(joint, cell=r / 2)
    stats = index.neighborhood_stats(joint.points, r, joint.labels)
    h = entropies_from_stats(stats, 0.0, 1)
    ok = (stats.counts[:, 1] >= min_neighbors) & np.isfinite(h)
    if not ok.any():
        raise InsufficientDataError("no point has enough neighbors")
    return math.fsum(h[ok].tolist()) / int(np.count_nonzero(ok))


__all__ = [
    "NdtCell", "NdtGrid", "NdtScore", "build_ndt", "ndt_score", "extract_features_relndt",
    "mme", "regularize_covariance", "MIN_CELL_POINTS", "TWO_PI_E",
]
