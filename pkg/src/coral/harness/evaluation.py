"""Cross-validation, training protocols and sensitivity diagnostics."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..classify import LabeledExample, TrainConfig, Verdict, predict, train
from ..cloud import apply_transform
from ..entropy import EntropyParams, coral_quality
from ..errors import (
    DegenerateTrainingError,
    InsufficientDataError,
    InvalidParameterError,
    UndefinedRatioError,
)
from .methods import MethodParams, extract_features
from .perturb import ErrorSpec, Instance, build_dataset, induce_error, offset_transform
from .synth import ScanPair

log = logging.getLogger(__name__)

STRUCTURED = "structured"
ENVIRONMENTS = ("structured", "semi", "unstructured")


class Protocol(str, Enum):
    SEPARATE = "separate"
    JOINT = "joint"
    GENERALIZATION = "generalization"


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, truth: Verdict, pred: Verdict) -> None:
        if truth is Verdict.ALIGNED:
            if pred is Verdict.ALIGNED:
                self.tp += 1
            else:
                self.fn += 1
        elif pred is Verdict.ALIGNED:
            self.fp += 1
        else:
            self.tn += 1

    def merge(self, other: "Confusion") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.tn += other.tn
        self.fn += other.fn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else math.nan


@dataclass(frozen=True)
class Sample:
    """A featurized instance tagged with its pair group and sequence."""

    example: LabeledExample
    group: str
    sequence_id: str
    environment: str


@dataclass
class EvaluationReport:
    protocol: str
    method: str
    per_sequence: "OrderedDict[str, Confusion]" = field(default_factory=OrderedDict)
    environments: dict[str, str] = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    skipped_folds: int = 0

    @property
    def overall(self) -> Confusion:
        c = Confusion()
        for v in self.per_sequence.values():
            c.merge(v)
        return c

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    def accuracy_for(self, environments) -> float:
        c = Confusion()
        for seq, v in self.per_sequence.items():
            if self.environments.get(seq) in environments:
                c.merge(v)
        return c.accuracy

    def record(self, sample: Sample, pred: Verdict) -> None:
        self.per_sequence.setdefault(sample.sequence_id, Confusion()).add(sample.example.label, pred)
        self.environments[sample.sequence_id] = sample.environment

    def sorted(self) -> "EvaluationReport":
        self.per_sequence = OrderedDict(sorted(self.per_sequence.items()))
        return self


def featurize(dataset: list[Instance], method: str, params: MethodParams) -> list[Sample]:
    out = []
    for inst in dataset:
        f = extract_features(method, *inst.clouds, params)
        out.append(Sample(LabeledExample(f, inst.label), inst.group,
                          inst.pair.sequence_id, inst.pair.environment))
    return out


def _fit_and_score(train_set: list[Sample], test_set: list[Sample], method: str,
                   cfg: TrainConfig, report: EvaluationReport) -> bool:
    try:
        model = train([s.example for s in train_set], cfg, method_tag=method)
    except DegenerateTrainingError as exc:
        log.warning("fold skipped: %s", exc)
        report.skipped_folds += 1
        return False
    for s in test_set:
        _, pred = predict(model, s.example.features)
        report.record(s, pred)
    return True


def fold_assignment(samples: list[Sample], k: int, seed: int = 0) -> dict[str, int]:
    """Map pair groups to folds; twins of a pair always share a fold."""
    groups = sorted({s.group for s in samples})
    if k < 2:
        raise InvalidParameterError("k must be >= 2")
    if len(groups) < k:
        raise InvalidParameterError(f"cannot split {len(groups)} pairs into {k} folds")
    perm = np.random.default_rng(seed).permutation(len(groups))
    folds = np.array_split(perm, k)
    return {groups[g]: f for f, members in enumerate(folds) for g in members}


def k_fold_evaluate(samples: list[Sample], k: int = 5, method: str = "coral", seed: int = 0,
                    config: TrainConfig | None = None,
                    report: EvaluationReport | None = None) -> EvaluationReport:
    """Stratified-by-pair k-fold cross-validation; every sample is tested exactly once."""
    cfg = config or TrainConfig()
    report = report if report is not None else EvaluationReport("k-fold", method)
    fold_of = fold_assignment(samples, k, seed)
    for f in range(k):
        test = [s for s in samples if fold_of[s.group] == f]
        tr = [s for s in samples if fold_of[s.group] != f]
        _fit_and_score(tr, test, method, cfg, report)
    return report.sorted()


@dataclass(frozen=True)
class SequenceData:
    sequence_id: str
    environment: str
    pairs: list[ScanPair]


def protocol_samples(sequences: list[SequenceData], method: str,
                     params: MethodParams | dict[str, MethodParams],
                     spec: ErrorSpec) -> list[Sample]:
    """Aligned and perturbed instances of every pair, featurized.

    ``params`` may map sequence ids to their own settings.
    """
    samples = []
    for seq in sequences:
        p = params[seq.sequence_id] if isinstance(params, dict) else params
        if seq.environment not in ENVIRONMENTS:
            raise InvalidParameterError(f"unknown environment class {seq.environment!r}")
        pairs = [replace(p, sequence_id=seq.sequence_id, environment=seq.environment)
                 for p in seq.pairs]
        samples += featurize(build_dataset(pairs, spec), method, p)
    return samples


def evaluate_protocol(protocol: Protocol | str, samples: list[Sample], method: str,
                      k: int = 5, seed: int = 0, config: TrainConfig | None = None,
                      parameters: dict | None = None) -> EvaluationReport:
    """Run one protocol over already featurized samples.

    separate: k-fold inside each sequence.  joint: k-fold over the pooled
    sequences, reported per sequence.  generalization: train on structured,
    test on the rest, and the reverse.
    """
    protocol = Protocol(protocol)
    report = EvaluationReport(protocol.value, method, parameters=dict(parameters or {}))
    cfg = config or TrainConfig()
    if not samples:
        raise InvalidParameterError("no samples to evaluate")
    if protocol is Protocol.SEPARATE:
        for seq in sorted({s.sequence_id for s in samples}):
            k_fold_evaluate([s for s in samples if s.sequence_id == seq], k, method, seed, cfg, report)
    elif protocol is Protocol.JOINT:
        k_fold_evaluate(samples, k, method, seed, cfg, report)
    else:
        structured = [s for s in samples if s.environment == STRUCTURED]
        other = [s for s in samples if s.environment != STRUCTURED]
        if not structured or not other:
            raise InvalidParameterError(
                "generalization needs structured and non-structured sequences")
        _fit_and_score(structured, other, method, cfg, report)
        _fit_and_score(other, structured, method, cfg, report)
    return report.sorted()


def protocol_run(protocol: Protocol | str, sequences: list[SequenceData], method: str,
                 params: MethodParams, spec: ErrorSpec | None = None, k: int = 5,
                 config: TrainConfig | None = None) -> EvaluationReport:
    spec = spec or ErrorSpec()
    if not sequences:
        raise InvalidParameterError("no sequences given")
    samples = protocol_samples(sequences, method, params, spec)
    return evaluate_protocol(protocol, samples, method, k, spec.seed, config,
                             parameters=parameter_record(params, spec))


def parameter_record(params: MethodParams, spec: ErrorSpec) -> dict:
    e = params.entropy
    return {
        "r_min": e.r_min, "r_max": e.r_max, "alpha": e.alpha, "epsilon": e.epsilon,
        "e_reject": e.e_reject, "min_overlap": e.min_overlap,
        "aggregation": e.aggregation.value, "min_neighbors": e.min_neighbors,
        "ndt_voxel": params.ndt_voxel, "min_cell_points": params.min_cell_points,
        "e_d": spec.e_d, "e_theta": spec.e_theta, "seed": spec.seed,
    }


def sensitivity_ratio(pair: ScanPair, spec: ErrorSpec, params: EntropyParams) -> float:
    """``Q(perturbed) / Q(aligned)``: how strongly the measure separates the two."""
    q_al = coral_quality(pair.cloud_a, pair.cloud_b, params)
    mis = induce_error(pair, spec)
    q_mis = coral_quality(mis.cloud_a, mis.cloud_b, params)
    if not (q_al.measured and q_mis.measured):
        raise InsufficientDataError("both Q values must be measured")
    if q_al.q == 0:
        raise UndefinedRatioError(
            f"Q_aligned is zero (Q_misaligned = {q_mis.q!r})", q_mis.q, q_al.q)
    return q_mis.q / q_al.q


def quality_surface(pair: ScanPair, params: EntropyParams, dxs, dys, dthetas=(0.0,)):
    """Q for every offset of ``cloud_b``; rows of ``(dx, dy, dtheta, Q)``.

    Offsets whose overlap falls below the gate give ``Q = nan``.
    """
    rows = []
    origin = pair.cloud_b.sensor_origin
    for dth in dthetas:
        for dx in dxs:
            for dy in dys:
                b = apply_transform(pair.cloud_b, offset_transform(dx, dy, dth, origin))
                res = coral_quality(pair.cloud_a, b, params)
                rows.append((float(dx), float(dy), float(dth), res.q))
    return rows
