"""Two-feature logistic regression deciding aligned versus misaligned."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateTrainingError,
    FormatError,
    InvalidFeatureError,
    InvalidParameterError,
)

log = logging.getLogger(__name__)


class Verdict(str, Enum):
    ALIGNED = "aligned"
    MISALIGNED = "misaligned"


@dataclass(frozen=True)
class FeatureVector:
    """Classifier inputs.  ``bypass`` forces a verdict without consulting the model,
    e.g. when the clouds barely overlap."""

    x1: float
    x2: float = 0.0
    bypass: Verdict | None = None
    method: str | None = None

    @classmethod
    def forced(cls, verdict: Verdict = Verdict.MISALIGNED, method: str | None = None):
        return cls(math.nan, math.nan, Verdict(verdict), method)


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: Verdict


@dataclass(frozen=True)
class LogisticModel:
    beta0: float
    beta1: float
    beta2: float
    t_h: float = 0.5
    method_tag: str = "coral"
    separated: bool = False
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if not all(math.isfinite(b) for b in (self.beta0, self.beta1, self.beta2)):
            raise InvalidParameterError("model coefficients must be finite")
        if not 0.0 < self.t_h < 1.0:
            raise InvalidParameterError("threshold t_h must lie in (0, 1)")

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2])

    def with_threshold(self, t_h: float) -> "LogisticModel":
        return LogisticModel(self.beta0, self.beta1, self.beta2, t_h, self.method_tag,
                             self.separated, self.converged, self.iterations)

    def save(self, path) -> None:
        vals = [float(v) for v in (self.beta0, self.beta1, self.beta2, self.t_h)]
        Path(path).write_text(self.method_tag + "\n" + "".join(f"{v!r}\n" for v in vals))

    @classmethod
    def load(cls, path) -> "LogisticModel":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if len(lines) != 5:
            raise FormatError(f"{path}: expected 5 lines (tag, beta0, beta1, beta2, t_h)")
        try:
            b0, b1, b2, th = (float(v) for v in lines[1:])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        return cls(b0, b1, b2, th, lines[0])


def _sigmoid(z):
    # split by sign so neither branch overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def probability(model: LogisticModel, x1, x2) -> np.ndarray:
    z = model.beta0 + model.beta1 * np.asarray(x1, float) + model.beta2 * np.asarray(x2, float)
    return _sigmoid(z)


def predict(model: LogisticModel, f: FeatureVector) -> tuple[float | None, Verdict]:
    """Return ``(p, verdict)``; aligned iff ``p >= t_h``.  Bypassed inputs give ``p = None``."""
    if f.bypass is not None:
        return None, Verdict(f.bypass)
    if f.method is not None and f.method != model.method_tag:
        raise InvalidParameterError(
            f"model trained on {model.method_tag!r} features, got {f.method!r}")
    if not (math.isfinite(f.x1) and math.isfinite(f.x2)):
        raise InvalidFeatureError("non-finite features without a bypass verdict")
    p = float(probability(model, f.x1, f.x2))
    return p, Verdict.ALIGNED if p >= model.t_h else Verdict.MISALIGNED


def log_likelihood(beta, X: np.ndarray, y: np.ndarray) -> float:
    """Bernoulli log-likelihood of labels ``y`` (1 = aligned) under ``beta``."""
    z = beta[0] + X @ np.asarray(beta[1:], float)
    # log p = -log(1 + e^-z), log(1 - p) = -log(1 + e^z)
    return float(np.sum(-y * np.logaddexp(0.0, -z) - (1.0 - y) * np.logaddexp(0.0, z)))


@dataclass(frozen=True)
class TrainConfig:
    t_h: float = 0.5
    max_iter: int = 500
    tol: float = 1e-8
    separation_norm: float = 1e4


def _design(data: list[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[e.features.x1, e.features.x2] for e in data], dtype=np.float64).reshape(-1, 2)
    y = np.array([e.label == Verdict.ALIGNED for e in data], dtype=np.float64)
    return X, y


def train(data: list[LabeledExample], config: TrainConfig | None = None,
          method_tag: str = "coral") -> LogisticModel:
    """Maximum-likelihood fit by damped Newton iterations on standardized features.

    Bypassed examples carry no features and are skipped.  Perfectly separable
    data has no finite optimum; the fit stops once the coefficient norm
    passes ``separation_norm`` or the training set is fit exactly, and the
    model is flagged ``separated``.
    """
    cfg = config or TrainConfig()
    data = [e for e in data if e.features.bypass is None]
    if len(data) < 4:
        raise DegenerateTrainingError(f"need at least 4 usable examples, got {len(data)}")
    X, y = _design(data)
    if not np.all(np.isfinite(X)):
        raise InvalidFeatureError("non-finite training features")
    if y.min() == y.max():
        raise DegenerateTrainingError("training data holds a single class")

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = np.column_stack([np.ones(len(X)), (X - mu) / sd])
    n = len(y)

    def ll(b):
        return log_likelihood(b, Z[:, 1:], y)

    b = np.zeros(3)
    cur = ll(b)
    converged = separated = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        p = _sigmoid(Z @ b)
        g = Z.T @ (y - p) / n
        if np.max(np.abs(g)) < cfg.tol:
            converged = True
            break
        H = (Z * (p * (1.0 - p))[:, None]).T @ Z / n
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = b + t * step
            new = ll(cand)
            if new >= cur:
                break
            t *= 0.5
        else:
            converged = True  # no ascent direction left at float precision
            break
        b, cur = cand, new
        if np.linalg.norm(b) > cfg.separation_norm:
            separated = True
            break
    p = _sigmoid(Z @ b)
    if not separated and np.all((p >= 0.5) == (y == 1.0)) and cur > -1e-6 * n:
        separated = True
    if separated:
        log.info("training data is (nearly) perfectly separable; coefficients are unbounded")
    beta = b[1:] / sd
    beta0 = b[0] - float(np.sum(b[1:] * mu / sd))
    return LogisticModel(float(beta0), float(beta[0]), float(beta[1]), cfg.t_h, method_tag,
                         separated, converged, it)
