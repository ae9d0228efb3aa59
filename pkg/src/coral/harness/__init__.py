from .evaluation import (
    Confusion,
    EvaluationReport,
    Protocol,
    Sample,
    SequenceData,
    evaluate_protocol,
    featurize,
    fold_assignment,
    k_fold_evaluate,
    protocol_run,
    protocol_samples,
    quality_surface,
    sensitivity_ratio,
)
from .methods import METHODS, MethodParams, extract_features
from .perturb import ErrorSpec, Instance, build_dataset, induce_error, offset_transform
from .synth import ScanPair, synth_scene, synth_sequence

__all__ = [
    "Confusion", "EvaluationReport", "Protocol", "Sample", "SequenceData", "evaluate_protocol",
    "featurize", "fold_assignment", "k_fold_evaluate", "protocol_run", "protocol_samples",
    "quality_surface", "sensitivity_ratio", "METHODS", "MethodParams", "extract_features",
    "ErrorSpec", "Instance", "build_dataset", "induce_error", "offset_transform", "ScanPair",
    "synth_scene", "synth_sequence",
]
