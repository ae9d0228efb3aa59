"""Induced alignment errors and dataset assembly."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace

import numpy as np

from ..classify import Verdict
from ..cloud import PointCloud, RigidTransform, apply_transform
from ..errors import InvalidParameterError
from .synth import ScanPair

DEFAULT_E_D = 0.1
DEFAULT_E_THETA = math.radians(0.57)


@dataclass(frozen=True)
class ErrorSpec:
    e_d: float = DEFAULT_E_D
    e_theta: float = DEFAULT_E_THETA
    seed: int = 0

    def __post_init__(self):
        if not (self.e_d >= 0 and self.e_theta >= 0):
            raise InvalidParameterError("error magnitudes must be >= 0")


def pair_rng(spec: ErrorSpec, pair: ScanPair) -> np.random.Generator:
    """Random stream owned by one pair, independent of processing order."""
    tag = zlib.crc32(pair.sequence_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([spec.seed, tag, pair.pair_index]))


def perturbation(spec: ErrorSpec, origin, rng: np.random.Generator) -> RigidTransform:
    """Rotation of ``±e_theta`` about the vertical through ``origin``, then an
    in-plane translation of length ``e_d`` in a uniformly random direction."""
    sign = 1.0 if rng.random() < 0.5 else -1.0
    phi = rng.uniform(0.0, 2.0 * math.pi)
    rot = RigidTransform.about_z(sign * spec.e_theta, origin)
    shift = RigidTransform.translation_only([spec.e_d * math.cos(phi), spec.e_d * math.sin(phi), 0.0])
    return shift.compose(rot)


def offset_transform(dx: float, dy: float, dtheta: float, origin) -> RigidTransform:
    """Deterministic counterpart of :func:`perturbation` used by quality sweeps."""
    return RigidTransform.translation_only([dx, dy, 0.0]).compose(
        RigidTransform.about_z(dtheta, origin))


def induce_error(pair: ScanPair, spec: ErrorSpec) -> ScanPair:
    """Move ``cloud_b`` off its ground-truth pose; ``cloud_a`` is untouched."""
    if spec.e_d == 0 and spec.e_theta == 0:
        return pair
    t = perturbation(spec, pair.cloud_b.sensor_origin, pair_rng(spec, pair))
    return replace(pair, cloud_b=apply_transform(pair.cloud_b, t))


@dataclass(frozen=True)
class Instance:
    """One classification instance: a (possibly perturbed) pair and its label."""

    pair: ScanPair
    label: Verdict

    @property
    def group(self) -> str:
        return f"{self.pair.sequence_id}/{self.pair.pair_index}"

    @property
    def clouds(self) -> tuple[PointCloud, PointCloud]:
        return self.pair.cloud_a, self.pair.cloud_b


def build_dataset(pairs: list[ScanPair], spec: ErrorSpec) -> list[Instance]:
    """An aligned and a misaligned twin for every pair, shuffled with ``spec.seed``."""
    if not pairs:
        raise InvalidParameterError("need at least one pair")
    out = []
    for p in pairs:
        out.append(Instance(p, Verdict.ALIGNED))
        out.append(Instance(induce_error(p, spec), Verdict.MISALIGNED))
    order = np.random.default_rng(spec.seed).permutation(len(out))
    return [out[i] for i in order]
