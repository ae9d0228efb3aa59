"""Feature extraction for each compared alignment measure."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..baselines import build_ndt, extract_features_relndt, mme, ndt_score
from ..classify import FeatureVector, Verdict
from ..cloud import PointCloud, join
from ..entropy import Aggregation, EntropyParams, coral_quality
from ..errors import InsufficientDataError, InvalidParameterError

log = logging.getLogger(__name__)

METHODS = ("coral", "coral-median", "mme", "ndt", "rel-ndt")


@dataclass(frozen=True)
class MethodParams:
    entropy: EntropyParams = field(default_factory=lambda: EntropyParams.fixed(0.3, e_reject=0.2))
    ndt_voxel: float = 0.6
    min_cell_points: int = 6

    @property
    def mme_radius(self) -> float:
        return self.entropy.r_min


def extract_features(method: str, a: PointCloud, b: PointCloud, params: MethodParams) -> FeatureVector:
    """Classifier inputs for one pair.  Single-output measures fix ``x2 = 0``.

    Pairs without evidence of alignment (too little overlap, no usable
    neighborhoods, no NDT cell in reach) come back with a forced
    ``misaligned`` verdict.
    """
    if method in ("coral", "coral-median"):
        p = params.entropy
        if method == "coral-median":
            p = p.with_(aggregation=Aggregation.MEDIAN)
        try:
            res = coral_quality(a, b, p)
        except InsufficientDataError:
            return FeatureVector.forced(Verdict.MISALIGNED, method)
        if not res.measured:
            return FeatureVector.forced(Verdict.MISALIGNED, method)
        return FeatureVector(res.h_joint, res.h_sep, None, method)
    if method == "mme":
        try:
            return FeatureVector(mme(join(a, b), params.mme_radius, params.entropy.min_neighbors),
                                 0.0, None, method)
        except InsufficientDataError:
            return FeatureVector.forced(Verdict.MISALIGNED, method)
    if method in ("ndt", "rel-ndt"):
        try:
            grid = build_ndt(a, params.ndt_voxel, params.min_cell_points)
        except InsufficientDataError:
            return FeatureVector.forced(Verdict.MISALIGNED, method)
        if method == "ndt":
            sc = ndt_score(grid, b)
            if sc.no_overlap:
                return FeatureVector.forced(Verdict.MISALIGNED, method)
            return FeatureVector(sc.s, 0.0, None, method)
        x1, x2, none = extract_features_relndt(grid, b, params.entropy.epsilon)
        if none:
            return FeatureVector.forced(Verdict.MISALIGNED, method)
        return FeatureVector(x1, x2, None, method)
    raise InvalidParameterError(f"unknown method {method!r}; expected one of {METHODS}")
