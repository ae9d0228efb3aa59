"""Synthetic stand-ins for structured and unstructured scan pairs.

A scene is a list of rectangular patches (structured geometry) plus optional
volumetric clutter.  A scan samples the scene uniformly at ``density`` points
per square meter, optionally thins it with range as a rotating scanner
would, and displaces every point along its viewing ray by Gaussian range
noise.  Two scans of one scene are independent samples that are exactly
aligned in the world frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cloud import Label, PointCloud
from ..errors import InvalidParameterError

KINDS = ("corridor", "plane-pair", "foliage")


@dataclass(frozen=True)
class Patch:
    corner: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u, self.v)))


@dataclass(frozen=True)
class Blob:
    center: np.ndarray
    radius: float


@dataclass
class Scene:
    patches: list[Patch] = field(default_factory=list)
    blobs: list[Blob] = field(default_factory=list)
    origins: list[np.ndarray] = field(default_factory=list)
    kind: str = "corridor"


@dataclass(frozen=True)
class ScanPair:
    cloud_a: PointCloud
    cloud_b: PointCloud
    sequence_id: str = "synthetic"
    pair_index: int = 0
    environment: str = "structured"


def _patch(corner, u, v) -> Patch:
    return Patch(np.asarray(corner, float), np.asarray(u, float), np.asarray(v, float))


def _box(x0, y0, z0, dx, dy, dz) -> list[Patch]:
    """Side faces of an axis-aligned box (no top or bottom)."""
    return [
        _patch((x0, y0, z0), (dx, 0, 0), (0, 0, dz)),
        _patch((x0, y0 + dy, z0), (dx, 0, 0), (0, 0, dz)),
        _patch((x0, y0, z0), (0, dy, 0), (0, 0, dz)),
        _patch((x0 + dx, y0, z0), (0, dy, 0), (0, 0, dz)),
    ]


def corridor_scene(length: float = 10.0, width: float = 3.0, height: float = 2.5,
                   pillar_spacing: float = 2.5, rng: np.random.Generator | None = None,
                   n_origins: int = 2, baseline: float = 1.0) -> Scene:
    """Floor, side walls, end walls and pillars along both walls.

    The pillars and end walls constrain motion along the corridor axis.  An
    ``rng`` jitters pillar positions so that scenes differ between pairs.
    """
    hw = width / 2
    patches = [
        _patch((0, -hw, 0), (length, 0, 0), (0, width, 0)),
        _patch((0, -hw, 0), (length, 0, 0), (0, 0, height)),
        _patch((0, hw, 0), (length, 0, 0), (0, 0, height)),
        _patch((0, -hw, 0), (0, width, 0), (0, 0, height)),
        _patch((length, -hw, 0), (0, width, 0), (0, 0, height)),
    ]
    xs = np.arange(pillar_spacing / 2, length - 0.3, pillar_spacing)
    for side in (-1, 1):
        for x in xs:
            jx = x + (rng.uniform(-0.4, 0.4) if rng is not None else 0.0)
            y0 = hw - 0.3 if side > 0 else -hw
            patches += _box(jx, y0, 0.0, 0.3, 0.3, height)
    centre = length / 2
    offsets = (np.arange(n_origins) - (n_origins - 1) / 2) * baseline
    origins = [np.array([centre + o, 0.0, 1.0]) for o in offsets]
    return Scene(patches, [], origins, "corridor")


def plane_scene(extent: float = 1.0, height: float = 1.0, n_origins: int = 2,
                baseline: float = 0.2) -> Scene:
    """A single horizontal square of side ``extent`` centred at the origin."""
    h = extent / 2
    patches = [_patch((-h, -h, 0), (extent, 0, 0), (0, extent, 0))]
    offsets = (np.arange(n_origins) - (n_origins - 1) / 2) * baseline
    origins = [np.array([o, 0.0, height]) for o in offsets]
    return Scene(patches, [], origins, "plane-pair")


def foliage_scene(extent: float = 8.0, rng: np.random.Generator | None = None,
                  n_blobs: int = 12, n_origins: int = 2, baseline: float = 1.0) -> Scene:
    """Ground square plus spherical clouds of clutter standing in for vegetation."""
    rng = rng if rng is not None else np.random.default_rng(0)
    h = extent / 2
    patches = [_patch((-h, -h, 0), (extent, 0, 0), (0, extent, 0))]
    blobs = []
    for _ in range(n_blobs):
        c = np.array([rng.uniform(-h, h), rng.uniform(-h, h), rng.uniform(0.8, 2.0)])
        blobs.append(Blob(c, float(rng.uniform(0.4, 1.0))))
    offsets = (np.arange(n_origins) - (n_origins - 1) / 2) * baseline
    origins = [np.array([o, 0.0, 1.0]) for o in offsets]
    return Scene(patches, blobs, origins, "foliage")


def scan(scene: Scene, origin, density: float, noise: float, rng: np.random.Generator,
         falloff: float | None = None, label: Label = Label.A) -> PointCloud:
    """Sample one scan of ``scene`` seen from ``origin``.

    ``density`` is points per m^2 on patches; blobs get ``density`` points per
    m^3.  With ``falloff`` set, a point at range ``d`` is kept with
    probability ``min(1, (falloff / d)**2)``.
    """
    origin = np.asarray(origin, dtype=np.float64)
    parts = []
    for p in scene.patches:
        n = int(rng.poisson(density * p.area))
        st = rng.random((n, 2))
        parts.append(p.corner + st[:, :1] * p.u + st[:, 1:] * p.v)
    for b in scene.blobs:
        vol = 4.0 / 3.0 * np.pi * b.radius ** 3
        n = int(rng.poisson(density * vol))
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        rad = b.radius * rng.random(n) ** (1.0 / 3.0)
        parts.append(b.center + d * rad[:, None])
    pts = np.concatenate(parts) if parts else np.zeros((0, 3))
    ray = pts - origin
    rng_d = np.linalg.norm(ray, axis=1)
    if falloff is not None:
        keep = rng.random(len(pts)) < np.minimum(1.0, (falloff / np.maximum(rng_d, 1e-9)) ** 2)
        pts, ray, rng_d = pts[keep], ray[keep], rng_d[keep]
    if noise > 0:
        pts = pts + ray / np.maximum(rng_d, 1e-12)[:, None] * rng.normal(0.0, noise, len(pts))[:, None]
    return PointCloud(pts, origin, label=label)


def environment_class(kind: str) -> str:
    return {"corridor": "structured", "plane-pair": "structured", "foliage": "unstructured"}[kind]


def build_scene(kind: str, extent: float, rng: np.random.Generator, n_origins: int = 2) -> Scene:
    if kind == "corridor":
        return corridor_scene(length=extent, rng=rng, n_origins=n_origins)
    if kind == "plane-pair":
        return plane_scene(extent=extent, n_origins=n_origins)
    if kind == "foliage":
        return foliage_scene(extent=extent, rng=rng, n_origins=n_origins)
    raise InvalidParameterError(f"unknown scene kind {kind!r}; expected one of {KINDS}")


def synth_scene(kind: str, density: float, extent: float, noise: float = 0.0,
                seed: int = 0, falloff: float | None = None, sequence_id: str = "synthetic",
                pair_index: int = 0) -> ScanPair:
    """Two independently sampled, ground-truth aligned scans of one synthetic scene."""
    if not (density > 0 and extent > 0):
        raise InvalidParameterError("density and extent must be > 0")
    if noise < 0:
        raise InvalidParameterError("noise must be >= 0")
    ss = np.random.SeedSequence(seed)
    geo_seed, a_seed, b_seed = ss.spawn(3)
    scene = build_scene(kind, extent, np.random.default_rng(geo_seed))
    a = scan(scene, scene.origins[0], density, noise, np.random.default_rng(a_seed), falloff, Label.A)
    b = scan(scene, scene.origins[1], density, noise, np.random.default_rng(b_seed), falloff, Label.B)
    return ScanPair(a, b, sequence_id, pair_index, environment_class(kind))


def synth_sequence(kind: str, n_scans: int, density: float, extent: float, noise: float = 0.0,
                   seed: int = 0, falloff: float | None = None) -> tuple[Scene, list[PointCloud]]:
    """``n_scans`` world-frame scans of one scene from sensor positions along a line."""
    if n_scans < 2:
        raise InvalidParameterError("a sequence needs at least 2 scans")
    ss = np.random.SeedSequence(seed)
    geo_seed, *scan_seeds = ss.spawn(n_scans + 1)
    scene = build_scene(kind, extent, np.random.default_rng(geo_seed), n_origins=n_scans)
    scans = [scan(scene, o, density, noise, np.random.default_rng(s), falloff)
             for o, s in zip(scene.origins, scan_seeds)]
    return scene, scans
