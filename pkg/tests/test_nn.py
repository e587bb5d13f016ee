import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modemguard.errors import DomainError, ModelFormatError
from modemguard.nn import (
    AdamState, ModelBundle, ModelConfig, NormStats, TrainConfig, adam_step, backward, batch_loss, bce_loss,
    forward, forward_reference, init_params, load_model, loss_and_grads, predict_proba, save_model, train,
    weighted_sample, zero_params,
)
from modemguard.nn.gradcheck import gradcheck, relative_error
from modemguard.nn.sampler import class_weights
from modemguard.nn.serialize import from_json, to_json
from modemguard.nn.train import accuracy, save_metrics
from modemguard.preprocess import TrainingSequence

LN2 = 0.693147180559945309417232121458
NEG_LN_0P1 = 2.30258509299404568401799145468
SIGMOID_10 = 0.999954602131297565605495223767
ADAM_FIRST_STEP = 0.000999999990000000099999999  # 1e-3 / (1 + 1e-8)
CFG = ModelConfig()


def random_bundle(seed=0) -> ModelBundle:
    rng = np.random.default_rng(seed)
    norm = NormStats(rng.normal(size=5), rng.uniform(0.5, 2.0, size=5))
    return ModelBundle(CFG, init_params(CFG, rng), norm, 0.5)


# ---------------------------------------------------------------- forward


def test_zero_network_is_half():
    b = ModelBundle(CFG, zero_params(CFG), NormStats.identity(5))
    x = np.random.default_rng(1).normal(size=(7, 5, 6)) * 50
    assert np.all(predict_proba(b, x) == 0.5)


def test_fc2_bias_only():
    p = zero_params(CFG)
    p["fc2.b"][0] = 10.0
    b = ModelBundle(CFG, p, NormStats.identity(5))
    assert forward(b, np.ones((5, 6))) == pytest.approx(SIGMOID_10, rel=1e-15)


def test_normalisation_invariance():
    b = random_bundle(2)
    x = np.random.default_rng(3).normal(size=(5, 6))
    scaled = x.copy()
    scaled[4] = scaled[4] * 4.0 + 3.0
    b2 = b.copy()
    b2.norm.mean[4] = b.norm.mean[4] * 4.0 + 3.0
    b2.norm.std[4] = b.norm.std[4] * 4.0
    assert forward(b2, scaled) == pytest.approx(forward(b, x), rel=1e-14)


def test_forward_matches_scalar_reference():
    b = random_bundle(4)
    X = np.random.default_rng(5).normal(size=(50, 5, 6)) * 3
    batched = predict_proba(b, X)
    ref = np.array([forward_reference(b, x.tolist()) for x in X])
    assert np.max(np.abs(batched - ref) / np.abs(ref)) < 1e-12


def test_forward_rejects_bad_input():
    b = random_bundle()
    with pytest.raises(DomainError):
        forward(b, np.full((5, 6), np.nan))
    with pytest.raises(DomainError):
        predict_proba(b, np.zeros((2, 4, 6)))


def test_fc2_bias_monotone():
    b = random_bundle(6)
    x = np.random.default_rng(7).normal(size=(5, 6))
    ps = []
    for bias in np.linspace(-5, 5, 11):
        b.params["fc2.b"][0] = bias
        ps.append(forward(b, x))
    assert all(a < c for a, c in zip(ps, ps[1:]))


# ---------------------------------------------------------------- loss / backward


def test_bce_examples():
    assert bce_loss(0.5, 1) == pytest.approx(LN2, abs=1e-15)
    assert bce_loss(0.5, 0) == pytest.approx(LN2, abs=1e-15)
    assert bce_loss(1 - 1e-7, 1) == pytest.approx(1e-7, rel=1e-6)
    assert bce_loss(0.9, 0) == pytest.approx(NEG_LN_0P1, rel=1e-12)
    assert math.isfinite(bce_loss(0.0, 1)) and math.isfinite(bce_loss(1.0, 0))


def test_backward_single_sample_gradcheck():
    res = gradcheck(seed=11, n_draws=1, batch=1)
    assert res.max_rel_error < 1e-4


def test_duplicate_batch_same_gradient():
    b = random_bundle(8)
    x = np.random.default_rng(9).normal(size=(1, 5, 6))
    g1 = backward(b, x, [1.0])
    g2 = backward(b, np.concatenate([x, x]), [1.0, 1.0])
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-14, atol=1e-300)


def test_saturated_correct_predictions_have_tiny_gradient():
    p = zero_params(CFG)
    p["fc2.b"][0] = 40.0
    b = ModelBundle(CFG, p, NormStats.identity(5))
    X = np.random.default_rng(0).normal(size=(4, 5, 6))
    g = backward(b, X, np.ones(4))
    assert math.sqrt(sum(float(np.sum(v * v)) for v in g.values())) < 1e-6


def test_backward_needs_batch():
    with pytest.raises(DomainError):
        backward(random_bundle(), np.zeros((0, 5, 6)), [])


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0 + 1e-9]))[0] < 1e-9


def test_initial_loss_near_ln2():
    rng = np.random.default_rng(12)
    losses = []
    for seed in range(5):
        b = random_bundle(seed)
        X = rng.normal(size=(256, 5, 6))
        y = np.repeat([0.0, 1.0], 128)
        losses.append(batch_loss(b, X * b.norm.std[None, :, None] + b.norm.mean[None, :, None], y))
    assert all(abs(v - LN2) < 0.05 for v in losses)


# ---------------------------------------------------------------- Adam


def test_adam_first_step():
    params = {"w": np.array([0.5, -0.25, 3.0])}
    st_ = AdamState(lr=1e-3)
    adam_step(params, {"w": np.ones(3)}, st_)
    np.testing.assert_allclose(params["w"], np.array([0.5, -0.25, 3.0]) - ADAM_FIRST_STEP, rtol=0, atol=1e-18)
    assert st_.t == 1


def test_adam_zero_gradient_no_move():
    params = {"w": np.array([1.0, 2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState())
    assert params["w"].tolist() == [1.0, 2.0]


def test_adam_is_not_sgd():
    # two steps with g differ from one step with 2g (they would coincide for plain SGD)
    a = {"w": np.array([1.0])}
    sa = AdamState(lr=0.1)
    adam_step(a, {"w": np.array([0.3])}, sa)
    adam_step(a, {"w": np.array([0.3])}, sa)
    b = {"w": np.array([1.0])}
    adam_step(b, {"w": np.array([0.6])}, AdamState(lr=0.1))
    assert a["w"][0] != b["w"][0]
    # hand evaluation: both Adam steps move by lr * g / (|g| + eps) ~= lr
    assert a["w"][0] == pytest.approx(1.0 - 0.2, abs=1e-6)
    assert b["w"][0] == pytest.approx(1.0 - 0.1, abs=1e-6)


def test_adam_step_index_starts_at_one():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamState(), t=0)


# ---------------------------------------------------------------- sampler


def test_sampler_balances_9_to_1():
    labels = np.array([1] * 900 + [0] * 100)
    idx = weighted_sample(labels, 100_000, seed=0)
    frac = float(np.mean(labels[idx] == 0))
    assert 0.48 <= frac <= 0.52


def test_sampler_uniform_when_balanced_and_deterministic():
    labels = np.array([0, 1] * 50)
    w = class_weights(labels)
    assert np.all(w == w[0])
    assert np.array_equal(weighted_sample(labels, 64, 5), weighted_sample(labels, 64, 5))


def test_sampler_single_class_error():
    with pytest.raises(ValueError):
        weighted_sample(np.ones(10), 4)


# ---------------------------------------------------------------- serialisation


def test_round_trip_bit_exact(tmp_path):
    b = random_bundle(13)
    save_model(b, tmp_path / "m.json")
    b2 = load_model(tmp_path / "m.json", CFG)
    X = np.random.default_rng(14).normal(size=(1000, 5, 6)) * 10
    assert np.max(np.abs(predict_proba(b, X) - predict_proba(b2, X))) == 0.0
    assert to_json(b2) == to_json(b)


def test_truncated_file(tmp_path):
    text = to_json(random_bundle())
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "t.json")


def test_hidden_size_mismatch_names_field():
    other = ModelConfig(hidden_size=3)
    b = ModelBundle(other, init_params(other, np.random.default_rng(0)), NormStats.identity(5))
    with pytest.raises(ModelFormatError) as e:
        from_json(to_json(b), expected=CFG)
    assert e.value.field == "config.hidden_size"


def test_shape_and_value_errors_name_field():
    doc = json.loads(to_json(random_bundle()))
    doc["lstm"]["w_ih"] = doc["lstm"]["w_ih"][:-1]
    with pytest.raises(ModelFormatError) as e:
        from_json(json.dumps(doc))
    assert e.value.field == "lstm.w_ih"
    doc = json.loads(to_json(random_bundle()))
    doc["fc2"]["b"] = [float("nan")]
    with pytest.raises(ModelFormatError) as e:
        from_json(json.dumps(doc))
    assert e.value.field == "fc2.b"
    doc = json.loads(to_json(random_bundle()))
    doc["version"] = 2
    with pytest.raises(ModelFormatError) as e:
        from_json(json.dumps(doc))
    assert e.value.field == "version"


def test_gate_block_layout():
    doc = json.loads(to_json(random_bundle()))
    assert set(doc) == {"version", "config", "norm", "threshold", "lstm", "fc1", "fc2"}
    assert np.asarray(doc["lstm"]["w_ih"]).shape == (8, 5)
    assert np.asarray(doc["lstm"]["w_hh"]).shape == (8, 2)


# ---------------------------------------------------------------- training


def _separable(n, n0, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = rng.normal(size=(5, 6))
        x[0] = i % 2
        y = 0 if i < n0 else 1
        if y == 0:
            x[4] += 5.0
        out.append(TrainingSequence(x, y, f"cpe{i:03d}-wan{i % 2}", i, i))
    return out


def test_train_separable_toy():
    tr = _separable(4000, 400, 0)
    va = _separable(1000, 100, 1)
    bundle, hist = train(tr, va, CFG, TrainConfig(batch_size=256, epochs=20, lr=1e-2, seed=0))
    assert max(h.val_bal_acc for h in hist) >= 0.99
    assert bundle.meta["val_bal_acc"] == max(h.val_bal_acc for h in hist)


def test_train_deterministic_and_zero_epochs(tmp_path):
    tr, va = _separable(600, 60, 2), _separable(200, 20, 3)
    tc = TrainConfig(batch_size=128, epochs=3, seed=5)
    b1, h1 = train(tr, va, CFG, tc)
    b2, h2 = train(tr, va, CFG, tc)
    assert to_json(b1) == to_json(b2) and h1 == h2
    b0, h0 = train(tr, va, CFG, TrainConfig(epochs=0, seed=5))
    assert h0 == []
    ref = init_params(CFG, np.random.default_rng(5))
    assert all(np.array_equal(b0.params[k], ref[k]) for k in ref)
    save_metrics(tmp_path / "m.csv", h1)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == \
        "epoch,train_acc,train_bal_acc,val_acc,val_bal_acc,train_loss"


def test_accuracy_definitions():
    y = np.array([1.0] * 9 + [0.0])
    plain, bal = accuracy(np.ones(10), y)
    assert plain == pytest.approx(0.9) and bal == pytest.approx(0.5)


# ---------------------------------------------------------------- properties


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_batched_equals_reference_property(seed):
    b = random_bundle(seed)
    x = np.random.default_rng(seed).normal(size=(5, 6)) * 5
    ref = forward_reference(b, x.tolist())
    assert abs(forward(b, x) - ref) <= 1e-12 * abs(ref)


@settings(max_examples=5)
@given(st.integers(0, 2 ** 32 - 1))
def test_gradient_law_property(seed):
    assert gradcheck(seed=seed, n_draws=1, batch=3).max_rel_error < 1e-4


@given(st.floats(1e-9, 1 - 1e-9), st.sampled_from([0.0, 1.0]))
def test_bce_nonnegative(p, y):
    assert bce_loss(p, y) >= 0.0
