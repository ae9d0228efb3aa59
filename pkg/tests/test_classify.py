import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coral.classify import (FeatureVector, LabeledExample, LogisticModel, TrainConfig, Verdict,
                            log_likelihood, predict, probability, train)
from coral.errors import (DegenerateTrainingError, FormatError, InvalidFeatureError,
                          InvalidParameterError)

A, M = Verdict.ALIGNED, Verdict.MISALIGNED


def generate(beta, n, seed, scale=(1.0, 1.0)):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) * scale
    z = beta[0] + X @ np.asarray(beta[1:])
    y = rng.random(n) < 1.0 / (1.0 + np.exp(-z))
    return [LabeledExample(FeatureVector(float(a), float(b)), A if t else M)
            for (a, b), t in zip(X, y)], X, y.astype(float)


def test_zero_model_boundary_is_aligned():
    p, v = predict(LogisticModel(0, 0, 0), FeatureVector(3.7, -1.2))
    assert p == 0.5 and v is A


def test_cancellation():
    p, _ = predict(LogisticModel(0, 1, -1), FeatureVector(2, 2))
    assert p == 0.5


def test_bypass_overrides_model():
    p, v = predict(LogisticModel(100, 0, 0), FeatureVector.forced(M))
    assert p is None and v is M


def test_non_finite_features_rejected():
    with pytest.raises(InvalidFeatureError):
        predict(LogisticModel(0, 1, 0), FeatureVector(math.nan, 0))


def test_method_tag_mismatch():
    with pytest.raises(InvalidParameterError):
        predict(LogisticModel(0, 1, 0, method_tag="mme"), FeatureVector(1, 0, method="coral"))


def test_model_validation():
    with pytest.raises(InvalidParameterError):
        LogisticModel(math.inf, 0, 0)
    with pytest.raises(InvalidParameterError):
        LogisticModel(0, 0, 0, t_h=1.0)


def test_probability_extremes_do_not_overflow():
    p = probability(LogisticModel(0, 1, 0), np.array([-1e4, 1e4]), 0.0)
    assert p.tolist() == [0.0, 1.0]


def test_save_load_round_trip(tmp_path):
    m = LogisticModel(0.1 + 0.2, -1 / 3, 2.5e-17, 0.7, "rel-ndt")
    m.save(tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0] == "rel-ndt" and len(lines) == 5
    back = LogisticModel.load(tmp_path / "m.txt")
    assert (back.beta0, back.beta1, back.beta2, back.t_h, back.method_tag) == \
        (m.beta0, m.beta1, m.beta2, m.t_h, m.method_tag)


def test_load_bad_model(tmp_path):
    (tmp_path / "m.txt").write_text("coral\n1\n2\n")
    with pytest.raises(FormatError):
        LogisticModel.load(tmp_path / "m.txt")


def test_recovers_generating_coefficients():
    beta = (0.5, 2.0, -1.0)
    data, _, _ = generate(beta, 10_000, seed=7)
    m = train(data)
    assert m.converged and not m.separated
    assert np.all(np.abs(m.beta - beta) <= 0.1)


def test_likelihood_beats_grid_search():
    data, X, y = generate((0.3, 1.5, -0.8), 50, seed=3)
    m = train(data)
    best = log_likelihood(m.beta, X, y)
    grid = np.linspace(-4, 4, 17)
    for b in itertools.product(grid, grid, grid):
        assert best >= log_likelihood(np.array(b), X, y)


def test_no_signal():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(4000, 2))
    y = rng.random(4000) < 0.5
    data = [LabeledExample(FeatureVector(*x), A if t else M) for x, t in zip(X, y)]
    m = train(data)
    assert abs(m.beta1) < 0.1 and abs(m.beta2) < 0.1
    acc = np.mean([predict(m, e.features)[1] == e.label for e in data])
    assert abs(acc - 0.5) < 0.05


def test_constant_second_feature_gets_zero_weight():
    rng = np.random.default_rng(2)
    x = rng.normal(size=200)
    y = rng.random(200) < 1 / (1 + np.exp(-2 * x))
    data = [LabeledExample(FeatureVector(float(v), 0.0), A if t else M) for v, t in zip(x, y)]
    assert train(data).beta2 == 0.0


def test_single_class_and_too_few():
    one = [LabeledExample(FeatureVector(float(i)), A) for i in range(10)]
    with pytest.raises(DegenerateTrainingError):
        train(one)
    with pytest.raises(DegenerateTrainingError):
        train(one[:2] + [LabeledExample(FeatureVector(5.0), M)])


def test_bypass_examples_excluded():
    data, X, y = generate((0.0, 1.0, 0.0), 200, seed=5)
    noisy = data + [LabeledExample(FeatureVector.forced(M), A)] * 50
    assert train(noisy).beta.tolist() == train(data).beta.tolist()


def test_separable_data_flagged():
    data = [LabeledExample(FeatureVector(float(v)), A if v > 0 else M)
            for v in np.linspace(-1, 1, 40)]
    m = train(data)
    assert m.separated
    assert all(predict(m, e.features)[1] is e.label for e in data)


def test_threshold_default():
    data, _, _ = generate((0, 1, 1), 100, seed=1)
    assert train(data).t_h == 0.5
    assert train(data, TrainConfig(t_h=0.8)).t_h == 0.8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_scaling_preserves_training_verdicts(seed, c):
    data, _, _ = generate((0.2, 1.0, -0.5), 120, seed=seed)
    scaled = [LabeledExample(FeatureVector(e.features.x1 * c, e.features.x2 * c), e.label)
              for e in data]
    m0, m1 = train(data), train(scaled)
    v0 = [predict(m0, e.features)[1] for e in data]
    v1 = [predict(m1, e.features)[1] for e in scaled]
    assert v0 == v1


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-5, 5), st.floats(-10, 10),
       st.floats(-10, 10), st.floats(0, 10))
def test_monotone_in_x1(b0, b1, b2, x1, x2, dx):
    m = LogisticModel(b0, b1, b2)
    _, lo = predict(m, FeatureVector(x1, x2))
    _, hi = predict(m, FeatureVector(x1 + dx, x2))
    assert not (lo is A and hi is M)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-10, 10),
       st.floats(-10, 10), st.floats(0.01, 0.98), st.floats(0.0, 0.99))
def test_raising_threshold_never_accepts(b0, b1, b2, x1, x2, t, dt):
    t2 = min(t + dt, 0.99)
    m = LogisticModel(b0, b1, b2, t)
    f = FeatureVector(x1, x2)
    _, v1 = predict(m, f)
    _, v2 = predict(m.with_threshold(t2), f)
    assert not (v1 is M and v2 is A)
    assert predict(m, f) == predict(m, f)
