"""Uniform-grid spatial index with exact fixed-radius queries.

Points are bucketed into cubic cells of side ``cell`` anchored at the world
origin and stored sorted by a linearized cell key.  Cells that share an
``(i, j)`` column and span a ``k`` interval are then one contiguous slice of
the sorted arrays, so a ball query costs a handful of binary searches plus a
scan of the candidate slices.

A point ``p`` is a neighbor of ``q`` at radius ``r`` iff
``dx*dx + dy*dy + dz*dz <= r*r`` with ``d = p - q``, evaluated in that order.
Every path (numba, numpy, tests) uses this exact predicate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit, prange
from .cloud import PointCloud
from .errors import InvalidParameterError

# fraction of a cell added to query bounds so float rounding never drops a cell
_BOUND_SLACK = 1e-7
_MAX_PAIRS = 1 << 22
_MAX_COLUMNS = 1 << 24


@njit(cache=True, inline="always")
def _bounds(qx, qy, qz, r, h, mins, dims):
    l0 = np.int64(np.floor((qx - r) / h - _BOUND_SLACK)) - mins[0]
    l1 = np.int64(np.floor((qy - r) / h - _BOUND_SLACK)) - mins[1]
    l2 = np.int64(np.floor((qz - r) / h - _BOUND_SLACK)) - mins[2]
    u0 = np.int64(np.floor((qx + r) / h + _BOUND_SLACK)) - mins[0]
    u1 = np.int64(np.floor((qy + r) / h + _BOUND_SLACK)) - mins[1]
    u2 = np.int64(np.floor((qz + r) / h + _BOUND_SLACK)) - mins[2]
    l0 = max(l0, 0)
    l1 = max(l1, 0)
    l2 = max(l2, 0)
    u0 = min(u0, dims[0] - 1)
    u1 = min(u1, dims[1] - 1)
    u2 = min(u2, dims[2] - 1)
    ok = l0 <= u0 and l1 <= u1 and l2 <= u2
    return ok, l0, l1, l2, u0, u1, u2


@njit(cache=True, inline="always")
def _column_far(i, j, qx, qy, r2, h, mins):
    # True when the whole (i, j) column lies farther than r from the query in xy
    slack = h * _BOUND_SLACK
    x0 = (i + mins[0]) * h - slack
    y0 = (j + mins[1]) * h - slack
    ex = max(x0 - qx, qx - (x0 + h + 2 * slack), 0.0)
    ey = max(y0 - qy, qy - (y0 + h + 2 * slack), 0.0)
    return ex * ex + ey * ey > r2


@njit(cache=True, inline="always")
def _column_slice(skeys, col_start, col, nz, l2, u2):
    # sorted positions of the cells (col, l2..u2); columns are contiguous runs
    cs = col_start[col]
    ce = col_start[col + 1]
    if cs == ce:
        return cs, cs
    if u2 - l2 + 1 >= nz:
        return cs, ce
    base = col * nz
    run = skeys[cs:ce]
    return cs + np.searchsorted(run, base + l2), cs + np.searchsorted(run, base + u2, side="right")


@njit(parallel=True, cache=True)
def _count_numba(spts, skeys, col_start, mins, dims, h, queries, radii):
    nq = queries.shape[0]
    out = np.zeros(nq, dtype=np.int64)
    for qi in prange(nq):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        r = radii[qi]
        r2 = r * r
        ok, l0, l1, l2, u0, u1, u2 = _bounds(qx, qy, qz, r, h, mins, dims)
        if not ok:
            continue
        c = 0
        for i in range(l0, u0 + 1):
            for j in range(l1, u1 + 1):
                if _column_far(i, j, qx, qy, r2, h, mins):
                    continue
                start, stop = _column_slice(skeys, col_start, i * dims[1] + j, dims[2], l2, u2)
                for p in range(start, stop):
                    dx = spts[p, 0] - qx
                    dy = spts[p, 1] - qy
                    dz = spts[p, 2] - qz
                    if dx * dx + dy * dy + dz * dz <= r2:
                        c += 1
        out[qi] = c
    return out


@njit(parallel=True, cache=True)
def _fill_numba(spts, skeys, col_start, order, mins, dims, h, queries, radii, offsets, out):
    nq = queries.shape[0]
    for qi in prange(nq):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        r = radii[qi]
        r2 = r * r
        ok, l0, l1, l2, u0, u1, u2 = _bounds(qx, qy, qz, r, h, mins, dims)
        if not ok:
            continue
        c = offsets[qi]
        for i in range(l0, u0 + 1):
            for j in range(l1, u1 + 1):
                if _column_far(i, j, qx, qy, r2, h, mins):
                    continue
                start, stop = _column_slice(skeys, col_start, i * dims[1] + j, dims[2], l2, u2)
                for p in range(start, stop):
                    dx = spts[p, 0] - qx
                    dy = spts[p, 1] - qy
                    dz = spts[p, 2] - qz
                    if dx * dx + dy * dy + dz * dz <= r2:
                        out[c] = order[p]
                        c += 1
        out[offsets[qi]:c].sort()


@njit(parallel=True, cache=True)
def _stats_numba(spts, skeys, col_start, slabels, mins, dims, h, queries, radii, qlabels,
                 counts, s1, s2):
    # slot 0: neighbors sharing the query's label; slot 1: all neighbors.
    # sums are of d = p - q, so the query itself anchors the moments.
    nq = queries.shape[0]
    for qi in prange(nq):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        r = radii[qi]
        r2 = r * r
        ql = qlabels[qi]
        ok, l0, l1, l2, u0, u1, u2 = _bounds(qx, qy, qz, r, h, mins, dims)
        ns = 0
        na = 0
        ax = ay = az = 0.0
        axx = axy = axz = ayy = ayz = azz = 0.0
        bx = by = bz = 0.0
        bxx = bxy = bxz = byy = byz = bzz = 0.0
        if ok:
            for i in range(l0, u0 + 1):
                for j in range(l1, u1 + 1):
                    if _column_far(i, j, qx, qy, r2, h, mins):
                        continue
                    start, stop = _column_slice(skeys, col_start, i * dims[1] + j, dims[2], l2, u2)
                    for p in range(start, stop):
                        dx = spts[p, 0] - qx
                        dy = spts[p, 1] - qy
                        dz = spts[p, 2] - qz
                        if dx * dx + dy * dy + dz * dz <= r2:
                            na += 1
                            bx += dx
                            by += dy
                            bz += dz
                            bxx += dx * dx
                            bxy += dx * dy
                            bxz += dx * dz
                            byy += dy * dy
                            byz += dy * dz
                            bzz += dz * dz
                            if slabels[p] == ql:
                                ns += 1
                                ax += dx
                                ay += dy
                                az += dz
                                axx += dx * dx
                                axy += dx * dy
                                axz += dx * dz
                                ayy += dy * dy
                                ayz += dy * dz
                                azz += dz * dz
        counts[qi, 0] = ns
        counts[qi, 1] = na
        s1[qi, 0, 0] = ax
        s1[qi, 0, 1] = ay
        s1[qi, 0, 2] = az
        s1[qi, 1, 0] = bx
        s1[qi, 1, 1] = by
        s1[qi, 1, 2] = bz
        s2[qi, 0, 0] = axx
        s2[qi, 0, 1] = axy
        s2[qi, 0, 2] = axz
        s2[qi, 0, 3] = ayy
        s2[qi, 0, 4] = ayz
        s2[qi, 0, 5] = azz
        s2[qi, 1, 0] = bxx
        s2[qi, 1, 1] = bxy
        s2[qi, 1, 2] = bxz
        s2[qi, 1, 3] = byy
        s2[qi, 1, 4] = byz
        s2[qi, 1, 5] = bzz


@njit(parallel=True, cache=True)
def _cross_numba(spts, skeys, col_start, slabels, mins, dims, h, queries, radii, qlabels, out):
    nq = queries.shape[0]
    for qi in prange(nq):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        r = radii[qi]
        r2 = r * r
        ql = qlabels[qi]
        ok, l0, l1, l2, u0, u1, u2 = _bounds(qx, qy, qz, r, h, mins, dims)
        found = False
        if ok:
            for i in range(l0, u0 + 1):
                for j in range(l1, u1 + 1):
                    if _column_far(i, j, qx, qy, r2, h, mins):
                        continue
                    start, stop = _column_slice(skeys, col_start, i * dims[1] + j, dims[2], l2, u2)
                    for p in range(start, stop):
                        if slabels[p] == ql:
                            continue
                        dx = spts[p, 0] - qx
                        dy = spts[p, 1] - qy
                        dz = spts[p, 2] - qz
                        if dx * dx + dy * dy + dz * dz <= r2:
                            found = True
                            break
                    if found:
                        break
                if found:
                    break
        out[qi] = found


# six unique entries of a symmetric 3x3, row-major upper triangle
_TRIU = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class NeighborhoodStats:
    """Per-query neighbor counts and moments for the query's own cloud
    (slot 0) and for all indexed points (slot 1)."""

    counts: np.ndarray      # (q, 2) int64
    sum_d: np.ndarray       # (q, 2, 3)  sum of p - q
    sum_dd: np.ndarray      # (q, 2, 6)  sum of (p - q)(p - q)^T, upper triangle

    def covariances(self, slot: int) -> np.ndarray:
        """Unbiased sample covariance (divisor n - 1); NaN where n < 2."""
        n = self.counts[:, slot].astype(np.float64)
        s1 = self.sum_d[:, slot]
        s2 = self.sum_dd[:, slot]
        cov = np.empty((len(n), 3, 3))
        with np.errstate(divide="ignore", invalid="ignore"):
            for e, (i, j) in enumerate(_TRIU):
                v = (s2[:, e] - s1[:, i] * s1[:, j] / n) / (n - 1.0)
                cov[:, i, j] = v
                cov[:, j, i] = v
        cov[n < 2] = np.nan
        return cov


class SpatialIndex:
    """Immutable grid index over a point cloud.

    ``cell`` only affects speed; results are exact for any radius.  Callers
    that know their largest query radius should pass it as ``cell``.
    """

    def __init__(self, cloud: PointCloud | np.ndarray, cell: float | None = None):
        if isinstance(cloud, PointCloud):
            points, labels = cloud.points, cloud.labels
        else:
            points = np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)
            labels = np.zeros(len(points), dtype=np.uint8)
        if cell is None:
            cell = _default_cell(points)
        if not cell > 0:
            raise InvalidParameterError("index cell must be > 0")
        self.cell = float(cell)
        self.n = len(points)
        if self.n == 0:
            points = np.zeros((0, 3))
        # keep the (i, j) column table bounded; a coarser grid is still exact
        while True:
            if self.n == 0:
                ijk = np.zeros((0, 3), dtype=np.int64)
                self.mins = np.zeros(3, dtype=np.int64)
                self.dims = np.ones(3, dtype=np.int64)
            else:
                ijk = np.floor(points / self.cell).astype(np.int64)
                self.mins = ijk.min(axis=0)
                self.dims = ijk.max(axis=0) - self.mins + 1
            if float(self.dims[0]) * float(self.dims[1]) <= _MAX_COLUMNS and \
                    float(np.prod(self.dims.astype(np.float64))) < 2.0 ** 62:
                break
            self.cell *= 2.0
        rel = ijk - self.mins
        keys = (rel[:, 0] * self.dims[1] + rel[:, 1]) * self.dims[2] + rel[:, 2]
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = np.ascontiguousarray(keys[self.order])
        self.sorted_points = np.ascontiguousarray(points[self.order])
        self.sorted_labels = np.ascontiguousarray(labels[self.order])
        ncols = int(self.dims[0] * self.dims[1])
        self.col_start = np.searchsorted(self.sorted_keys,
                                         np.arange(ncols + 1, dtype=np.int64) * self.dims[2])
        for a in (self.mins, self.dims, self.order, self.sorted_keys,
                  self.sorted_points, self.sorted_labels, self.col_start):
            a.setflags(write=False)

    # -- batched queries -------------------------------------------------

    def query_radius_batch(self, queries, radii) -> tuple[np.ndarray, np.ndarray]:
        """Neighbors of many queries in CSR form ``(offsets, indices)``.

        ``indices[offsets[i]:offsets[i + 1]]`` are the sorted original point
        indices within ``radii[i]`` of ``queries[i]``.
        """
        queries, radii = self._prep(queries, radii)
        if _accel.USE_NUMBA:
            counts = _count_numba(self.sorted_points, self.sorted_keys, self.col_start, self.mins,
                                  self.dims, self.cell, queries, radii)
            offsets = np.zeros(len(queries) + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            out = np.empty(offsets[-1], dtype=np.int64)
            _fill_numba(self.sorted_points, self.sorted_keys, self.col_start, self.order, self.mins,
                        self.dims, self.cell, queries, radii, offsets, out)
            return offsets, out
        qids, idxs = [], []
        for qid, pos in self._pairs(queries, radii):
            qids.append(qid)
            idxs.append(self.order[pos])
        qid = np.concatenate(qids) if qids else np.zeros(0, dtype=np.int64)
        idx = np.concatenate(idxs) if idxs else np.zeros(0, dtype=np.int64)
        srt = np.lexsort((idx, qid))
        offsets = np.zeros(len(queries) + 1, dtype=np.int64)
        np.cumsum(np.bincount(qid, minlength=len(queries)), out=offsets[1:])
        return offsets, idx[srt]

    def neighborhood_stats(self, queries, radii, query_labels) -> NeighborhoodStats:
        queries, radii = self._prep(queries, radii)
        qlabels = np.ascontiguousarray(query_labels, dtype=np.uint8).reshape(-1)
        nq = len(queries)
        counts = np.zeros((nq, 2), dtype=np.int64)
        s1 = np.zeros((nq, 2, 3))
        s2 = np.zeros((nq, 2, 6))
        if _accel.USE_NUMBA:
            _stats_numba(self.sorted_points, self.sorted_keys, self.col_start, self.sorted_labels,
                         self.mins, self.dims, self.cell, queries, radii, qlabels,
                         counts, s1, s2)
        else:
            for qid, pos in self._pairs(queries, radii):
                d = self.sorted_points[pos] - queries[qid]
                same = self.sorted_labels[pos] == qlabels[qid]
                for slot, sel in ((0, same), (1, None)):
                    q_ = qid if sel is None else qid[sel]
                    d_ = d if sel is None else d[sel]
                    counts[:, slot] += np.bincount(q_, minlength=nq)
                    for a in range(3):
                        s1[:, slot, a] += np.bincount(q_, weights=d_[:, a], minlength=nq)
                    for e, (i, j) in enumerate(_TRIU):
                        s2[:, slot, e] += np.bincount(q_, weights=d_[:, i] * d_[:, j],
                                                      minlength=nq)
        return NeighborhoodStats(counts, s1, s2)

    def has_cross_neighbor(self, queries, radii, query_labels) -> np.ndarray:
        """True where some indexed point with a different label lies within the radius."""
        queries, radii = self._prep(queries, radii)
        qlabels = np.ascontiguousarray(query_labels, dtype=np.uint8).reshape(-1)
        out = np.zeros(len(queries), dtype=np.bool_)
        if _accel.USE_NUMBA:
            _cross_numba(self.sorted_points, self.sorted_keys, self.col_start, self.sorted_labels,
                         self.mins, self.dims, self.cell, queries, radii, qlabels, out)
        else:
            for qid, pos in self._pairs(queries, radii):
                out[qid[self.sorted_labels[pos] != qlabels[qid]]] = True
        return out

    # -- numpy machinery -------------------------------------------------

    def _prep(self, queries, radii):
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        radii = np.ascontiguousarray(np.broadcast_to(np.asarray(radii, dtype=np.float64),
                                                     (len(queries),)))
        if np.any(~(radii > 0)):
            raise InvalidParameterError("query radius must be > 0")
        return queries, radii

    def _pairs(self, queries, radii, max_pairs: int = _MAX_PAIRS):
        """Yield ``(query ids, sorted positions)`` of all neighbor pairs, chunked."""
        nq = len(queries)
        if nq == 0 or self.n == 0:
            return
        h = self.cell
        lo = np.floor((queries - radii[:, None]) / h - _BOUND_SLACK).astype(np.int64) - self.mins
        hi = np.floor((queries + radii[:, None]) / h + _BOUND_SLACK).astype(np.int64) - self.mins
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, self.dims - 1)
        ok = np.all(lo <= hi, axis=1)
        span = np.where(ok[:, None], hi - lo + 1, 0)
        ny, nz = self.dims[1], self.dims[2]
        starts, stops = [], []
        for di in range(int(span[:, 0].max(initial=0))):
            for dj in range(int(span[:, 1].max(initial=0))):
                valid = (di < span[:, 0]) & (dj < span[:, 1])
                slack = h * _BOUND_SLACK
                x0 = (lo[:, 0] + di + self.mins[0]) * h - slack
                y0 = (lo[:, 1] + dj + self.mins[1]) * h - slack
                ex = np.maximum(np.maximum(x0 - queries[:, 0], queries[:, 0] - (x0 + h + 2 * slack)), 0.0)
                ey = np.maximum(np.maximum(y0 - queries[:, 1], queries[:, 1] - (y0 + h + 2 * slack)), 0.0)
                valid &= ex * ex + ey * ey <= radii * radii
                col = np.where(valid, (lo[:, 0] + di) * ny + lo[:, 1] + dj, 0)
                base = col * nz
                s = np.searchsorted(self.sorted_keys, base + lo[:, 2], side="left")
                e = np.searchsorted(self.sorted_keys, base + hi[:, 2], side="right")
                starts.append(np.where(valid, s, 0))
                stops.append(np.where(valid, e, 0))
        if not starts:
            return
        starts = np.stack(starts, axis=1)
        lengths = np.stack(stops, axis=1) - starts
        per_query = lengths.sum(axis=1)
        bounds = _chunk_bounds(per_query, max_pairs)
        r2 = radii * radii
        for q0, q1 in zip(bounds[:-1], bounds[1:]):
            n = lengths[q0:q1].reshape(-1)
            s = starts[q0:q1].reshape(-1)
            total = int(n.sum())
            if total == 0:
                continue
            qid = np.repeat(np.repeat(np.arange(q0, q1), lengths.shape[1]), n)
            first = np.repeat(np.cumsum(n) - n, n)
            pos = np.repeat(s, n) + (np.arange(total) - first)
            d = self.sorted_points[pos] - queries[qid]
            d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
            keep = d2 <= r2[qid]
            yield qid[keep], pos[keep]


def _chunk_bounds(per_query: np.ndarray, max_pairs: int) -> list[int]:
    bounds = [0]
    acc = 0
    for i, c in enumerate(per_query.tolist()):
        if acc and acc + c > max_pairs:
            bounds.append(i)
            acc = 0
        acc += c
    bounds.append(len(per_query))
    return bounds


def _default_cell(points: np.ndarray) -> float:
    if len(points) < 2:
        return 1.0
    ext = np.ptp(points, axis=0)
    ext = np.maximum(ext, 1e-3 * max(ext.max(), 1e-9))
    # about eight points per occupied cell for volumetric data
    return float(max((np.prod(ext) * 8.0 / len(points)) ** (1.0 / 3.0), 1e-6))


def radius_neighbors(index: SpatialIndex, query, r: float) -> np.ndarray:
    """Sorted indices of the indexed points within distance ``r`` of ``query``."""
    offsets, idx = index.query_radius_batch(np.asarray(query, dtype=np.float64).reshape(1, 3), r)
    return idx[offsets[0]:offsets[1]]
