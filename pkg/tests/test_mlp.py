import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from synthetic import linear_distance_task
from blecollab import ModelFormatError, ModelIntegrityError, TrainingDataError
from blecollab.mlp import (
    ARCHITECTURES,
    MlpArchitecture,
    MlpFeatureVector,
    MlpModel,
    TrainingSet,
    architecture,
    denormalize_inputs,
    evaluate,
    forward,
    init_params,
    load_model,
    model_from_dict,
    model_to_dict,
    mse_and_grad,
    mse_loss,
    normalize,
    save_model,
    train_scg,
)

IDENTITY = np.tile([-1.0, 1.0], (6, 1))


def _degenerate(act: str) -> MlpModel:
    w1 = np.zeros((1, 6))
    w1[0, 0] = 1.0
    return MlpModel(MlpArchitecture((1,), act), [w1, np.ones((1, 1))], [np.zeros(1), np.zeros(1)], IDENTITY, np.array([-1.0, 1.0]))


def _random_model(sizes, act="tansig", seed=0):
    rng = np.random.default_rng(seed)
    arch = MlpArchitecture(tuple(sizes[1:-1]), act)
    ws = [rng.normal(0, 1, (sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)]
    bs = [rng.normal(0, 1, sizes[i + 1]) for i in range(len(sizes) - 1)]
    ranges = np.column_stack([rng.uniform(-100, 0, 6), rng.uniform(1, 100, 6)])
    return MlpModel(arch, ws, bs, ranges, np.array([0.0, 20.0]))


def test_architectures_table():
    assert ARCHITECTURES["MLP1"].hidden_layer_sizes == (3,) and ARCHITECTURES["MLP1"].hidden_activation == "tansig"
    assert ARCHITECTURES["MLP2"].hidden_activation == "logsig"
    assert ARCHITECTURES["MLP3"].layer_sizes == (6, 6, 3, 1)
    assert ARCHITECTURES["MLP4"].layer_sizes == (6, 12, 6, 1)
    assert all(a.epochs == 50 for a in ARCHITECTURES.values())
    with pytest.raises(ValueError, match="MLP1"):
        architecture("MLP9")


def test_normalize_examples():
    m = _random_model([6, 3, 1])
    lo, hi = m.input_ranges[:, 0], m.input_ranges[:, 1]
    assert np.allclose(normalize(m, lo), -1.0)
    assert np.allclose(normalize(m, (lo + hi) / 2), 0.0, atol=1e-12)
    v = lo + 0.3 * (hi - lo)
    assert np.allclose(denormalize_inputs(m.input_ranges, normalize(m, v)), v, rtol=1e-12)
    assert np.allclose(normalize(m, hi + 10 * (hi - lo)), 1.5)
    assert np.allclose(normalize(m, lo - 10 * (hi - lo)), -1.5)


def test_forward_zero_net_gives_output_midpoint():
    m = _random_model([6, 3, 1])
    m = MlpModel(m.architecture, [np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases],
                 m.input_ranges, np.array([2.0, 12.0]))
    assert forward(m, np.ones(6)) == 7.0


@pytest.mark.parametrize("act,expected", [("tansig", 0.46212), ("logsig", 0.62246)])
def test_forward_degenerate_net(act, expected):
    f = MlpFeatureVector(0.5, 0, 0, 0, 0, 0)
    assert forward(_degenerate(act), f) == pytest.approx(expected, abs=5e-6)


def test_forward_degenerate_exact_values():
    assert forward(_degenerate("tansig"), [0.5, 0, 0, 0, 0, 0]) == pytest.approx(math.tanh(0.5), abs=1e-15)
    assert forward(_degenerate("logsig"), [0.5, 0, 0, 0, 0, 0]) == pytest.approx(1 / (1 + math.exp(-0.5)), abs=1e-15)


def test_forward_shape_mismatch():
    with pytest.raises(ModelIntegrityError):
        forward(_degenerate("tansig"), [1.0, 2.0])


def test_model_integrity_checks():
    m = _random_model([6, 3, 1])
    with pytest.raises(ModelIntegrityError):
        MlpModel(m.architecture, [m.weights[0][:, :5], m.weights[1]], m.biases, m.input_ranges, m.output_range)
    bad = m.input_ranges.copy()
    bad[2] = [1.0, 1.0]
    with pytest.raises(ModelIntegrityError):
        MlpModel(m.architecture, m.weights, m.biases, bad, m.output_range)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["tansig", "logsig"]))
def test_forward_finite_for_in_range_inputs(seed, act):
    m = _random_model([6, 12, 6, 1], act, seed)
    rng = np.random.default_rng(seed)
    lo, hi = m.input_ranges[:, 0], m.input_ranges[:, 1]
    X = lo + rng.uniform(0, 1, (50, 6)) * (hi - lo)
    assert np.all(np.isfinite(m.predict(X)))


@pytest.mark.parametrize("sizes", [(6, 3, 1), (6, 12, 6, 1), (6, 6, 3, 1)])
@pytest.mark.parametrize("act", ["tansig", "logsig"])
def test_gradient_matches_finite_differences(sizes, act):
    rng = np.random.default_rng(7)
    theta = init_params(sizes, 3) * 4
    Xn = rng.uniform(-1, 1, (10, 6))
    Tn = rng.uniform(-1, 1, 10)
    _, g = mse_and_grad(theta, sizes, act, Xn, Tn)
    fd = oracles.finite_difference_grad(lambda th: mse_loss(th, sizes, act, Xn, Tn), theta, 1e-5)
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
    assert rel.max() < 1e-4


def test_constant_target_learned():
    rng = np.random.default_rng(0)
    data = TrainingSet(rng.uniform(-1, 1, (100, 6)), np.full(100, 4.2))
    model, hist = train_scg(architecture("MLP1"), data, seed=0)
    assert hist.train_mse[-1] < hist.initial_train_mse
    assert np.all(np.abs(model.predict(data.features) - 4.2) < 0.1)


def test_linear_task_reduces_rmse():
    data = linear_distance_task(0)
    model, hist = train_scg(architecture("MLP1"), data, seed=0)
    assert len(hist.train_mse) == 50
    init = math.sqrt(hist.initial_train_mse)
    assert math.sqrt(hist.train_mse[-1]) < 0.2 * init


def test_training_deterministic():
    data = linear_distance_task(1, n=200)
    tr, va = data.split(0.7, 1)
    m1, h1 = train_scg(architecture("MLP3"), tr, va, seed=5)
    m2, h2 = train_scg(architecture("MLP3"), tr, va, seed=5)
    assert h1.train_mse == h2.train_mse and h1.val_mse == h2.val_mse
    assert np.array_equal(m1.params, m2.params)


@pytest.mark.parametrize("arch_id", sorted(ARCHITECTURES))
def test_scg_final_not_worse_than_initial(arch_id):
    data = linear_distance_task(2, n=200)
    _, hist = train_scg(architecture(arch_id), data, seed=2)
    assert hist.train_mse[-1] <= hist.initial_train_mse


def test_best_validation_iterate_selected():
    data = linear_distance_task(3, n=200)
    tr, va = data.split(0.7, 3)
    model, hist = train_scg(architecture("MLP1"), tr, va, seed=3)
    assert len(hist.val_mse) == 50
    best = min(hist.val_mse)
    assert best <= hist.initial_val_mse
    from blecollab.mlp import normalize_inputs, normalize_targets
    Xv = normalize_inputs(model.input_ranges, va.features)
    Tv = normalize_targets(model.output_range, va.targets)
    assert mse_loss(model.params, model.architecture.layer_sizes, "tansig", Xv, Tv) == pytest.approx(best, rel=1e-12)


def test_degenerate_feature_range():
    X = np.random.default_rng(0).uniform(-1, 1, (20, 6))
    X[:, 3] = 2.0
    with pytest.raises(TrainingDataError, match="rx_x"):
        train_scg(architecture("MLP1"), TrainingSet(X, np.arange(20.0)))


def test_epochs_validation():
    with pytest.raises(ValueError):
        train_scg(architecture("MLP1"), linear_distance_task(0, 20), epochs=0)


def test_evaluate_constant_offset():
    m = _degenerate("tansig")
    X = np.zeros((5, 6))
    X[:, 0] = np.linspace(-0.9, 0.9, 5)
    res = evaluate(m, TrainingSet(X, np.tanh(X[:, 0]) + 1.0))
    assert res.rmse == pytest.approx(1.0) and res.r == pytest.approx(1.0)
    assert res.count == 5


def test_evaluate_perfect_and_zero_variance():
    m = _degenerate("tansig")
    X = np.zeros((5, 6))
    X[:, 0] = np.linspace(0.1, 0.9, 5)
    res = evaluate(m, TrainingSet(X, np.tanh(X[:, 0])))
    assert res.rmse == pytest.approx(0.0, abs=1e-15) and res.r == pytest.approx(1.0)
    flat = evaluate(m, TrainingSet(np.zeros((4, 6)), np.full(4, 3.0)))
    assert flat.r is None and flat.rmse == pytest.approx(3.0)


def test_evaluate_matches_oracle():
    rng = np.random.default_rng(11)
    m = _random_model([6, 3, 1])
    lo, hi = m.input_ranges[:, 0], m.input_ranges[:, 1]
    for _ in range(20):
        X = lo + rng.uniform(0, 1, (30, 6)) * (hi - lo)
        t = rng.uniform(0, 20, 30)
        pred = [forward(m, row) for row in X]
        res = evaluate(m, TrainingSet(X, t))
        assert res.rmse == pytest.approx(math.sqrt(oracles.mean([(p - y) ** 2 for p, y in zip(pred, t)])), abs=1e-9)
        assert res.r == pytest.approx(oracles.pearson(pred, t), abs=1e-9)


def test_save_load_round_trip(tmp_path):
    m = _random_model([6, 12, 6, 1], "logsig", 4)
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back.architecture == m.architecture
    for a, b in zip(back.weights + back.biases, m.weights + m.biases):
        assert np.array_equal(a, b)
    assert np.array_equal(back.input_ranges, m.input_ranges)
    assert np.array_equal(back.output_range, m.output_range)
    save_model(back, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_load_wrong_shape(tmp_path):
    doc = model_to_dict(_random_model([6, 3, 1]))
    doc["layers"][0]["weights"] = doc["layers"][0]["weights"][:2]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelIntegrityError):
        load_model(path)


def test_load_truncated(tmp_path):
    path = tmp_path / "m.json"
    save_model(_random_model([6, 3, 1]), path)
    path.write_text(path.read_text()[:100])
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_version_mismatch():
    doc = model_to_dict(_random_model([6, 3, 1]))
    doc["version"] = 99
    with pytest.raises(ModelFormatError, match="version"):
        model_from_dict(doc)
