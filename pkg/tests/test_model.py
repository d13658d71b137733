import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from raftfed.data import synth_blobs
from raftfed.model import (
    Batch,
    HyperParams,
    ModelParams,
    NumericError,
    evaluate,
    gradient,
    init_model,
    load_params,
    local_train,
    loss,
    n_params,
    predict_proba,
    save_params,
    sgd_step,
    weighted_merge,
)


def random_batch(rng, shape, n):
    return Batch(rng.normal(size=(n, shape[0])), rng.integers(0, shape[-1], n))


def central_fd(params, batch, h=1e-5):
    out = np.empty(len(params))
    for i in range(len(params)):
        up, down = params.values.copy(), params.values.copy()
        up[i] += h
        down[i] -= h
        out[i] = (loss(ModelParams(up, params.shape), batch) - loss(ModelParams(down, params.shape), batch)) / (2 * h)
    return out


def test_parameter_count():
    assert len(init_model([2, 3], 0)) == 9
    assert n_params([784, 128, 10]) == 784 * 128 + 128 + 128 * 10 + 10


def test_init_determinism_and_bias():
    a, b = init_model([4, 8, 3], 5), init_model([4, 8, 3], 5)
    assert np.array_equal(a.values, b.values)
    for _, bias in a.layers():
        assert not bias.any()


def test_init_weight_mean():
    W = init_model([100, 100], 1).layers()[0][0].ravel()
    sigma = math.sqrt(3 / 100) / math.sqrt(3)
    assert abs(W.mean()) < 3 * sigma / math.sqrt(W.size)


@pytest.mark.parametrize("shape", [[3], [2, 0, 3]])
def test_init_rejects_bad_shape(shape):
    with pytest.raises(ValueError):
        init_model(shape, 0)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(np.zeros(5), (2, 3))
    assert not ModelParams(np.array([np.nan] * 9), (2, 3)).is_finite()


@pytest.mark.parametrize("C", [2, 5, 10])
def test_uniform_logits_give_log_c(C):
    params = ModelParams(np.zeros(n_params([3, C])), (3, C))
    batch = Batch(np.ones((4, 3)), np.arange(4) % C)
    assert loss(params, batch) == pytest.approx(math.log(C), abs=1e-12)


def test_confident_logits_give_near_zero_loss():
    values = np.zeros(n_params([1, 2]))
    values[-2:] = [50.0, -50.0]  # output biases
    assert loss(ModelParams(values, (1, 2)), Batch(np.zeros((3, 1)), np.zeros(3, int))) < 1e-20


def straight_line_loss(params, X, y):
    # independent scalar-loop implementation of tanh MLP + softmax CE
    total = 0.0
    for row, label in zip(X, y):
        h = list(row)
        layers = params.layers()
        for li, (W, b) in enumerate(layers):
            z = [b[j] + sum(h[i] * W[i][j] for i in range(len(h))) for j in range(len(b))]
            h = [math.tanh(v) for v in z] if li < len(layers) - 1 else z
        mx = max(h)
        lse = mx + math.log(sum(math.exp(v - mx) for v in h))
        total += lse - h[label]
    return total / len(y)


def test_loss_matches_straight_line_oracle():
    rng = np.random.default_rng(3)
    p = init_model([3, 4, 3], rng)
    p = ModelParams(p.values + rng.normal(scale=0.1, size=len(p)), p.shape)
    b = random_batch(rng, p.shape, 6)
    assert abs(loss(p, b) - straight_line_loss(p, b.inputs, b.labels)) < 1e-10


def test_output_bias_gradient_at_zero():
    params = ModelParams(np.zeros(n_params([2, 3])), (2, 3))
    g = gradient(params, Batch(np.zeros((1, 2)), np.array([1])))
    assert np.allclose(g[-3:], np.array([1 / 3, 1 / 3 - 1, 1 / 3]))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = init_model([3, 5, 4], rng)
    b = random_batch(rng, p.shape, 7)
    a, n = gradient(p, b), central_fd(p, b)
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    assert rel.max() < 1e-4


def test_duplicated_rows_same_gradient():
    rng = np.random.default_rng(0)
    p = init_model([2, 4, 3], rng)
    b = random_batch(rng, p.shape, 5)
    dup = Batch(np.vstack([b.inputs, b.inputs]), np.concatenate([b.labels, b.labels]))
    assert np.allclose(gradient(p, b), gradient(p, dup))


def test_batch_validation():
    p = init_model([2, 3], 0)
    with pytest.raises(ValueError):
        loss(p, Batch(np.zeros((0, 2)), np.zeros(0, int)))
    with pytest.raises(ValueError):
        loss(p, Batch(np.zeros((2, 3)), np.zeros(2, int)))
    with pytest.raises(ValueError):
        loss(p, Batch(np.zeros((2, 2)), np.array([0, 3])))


def test_non_finite_activation_raises():
    p = ModelParams(np.full(n_params([1, 2]), 1e308), (1, 2))
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        loss(p, Batch(np.full((1, 1), 1e308), np.array([0])))


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    p = init_model([4, 6, 5], rng)
    probs = predict_proba(p, rng.normal(size=(20, 4)) * 10)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_sgd_examples():
    p = ModelParams(np.array([1.0, 1.0]), (1, 1))
    assert np.array_equal(sgd_step(p, [1.0, -1.0], 0.5).values, [0.5, 1.5])
    assert np.array_equal(sgd_step(p, [3.0, 4.0], 0.0).values, p.values)
    g = np.array([0.3, -0.7])
    assert np.allclose(sgd_step(sgd_step(p, g, 0.1), g, 0.1).values, sgd_step(p, g, 0.2).values)
    with pytest.raises(ValueError):
        sgd_step(p, [1.0], 0.1)


def test_local_train_no_op_and_determinism():
    rng = np.random.default_rng(0)
    p = init_model([2, 4, 2], rng)
    b = random_batch(rng, p.shape, 30)
    assert local_train(p, b, 0, 0.1, 10, np.random.default_rng(1)) is p
    a = local_train(p, b, 3, 0.1, 10, np.random.default_rng(1))
    c = local_train(p, b, 3, 0.1, 10, np.random.default_rng(1))
    assert np.array_equal(a.values, c.values)


def test_local_train_small_lr_descends():
    rng = np.random.default_rng(4)
    p = init_model([2, 8, 3], rng)
    b = random_batch(rng, p.shape, 50)
    after = local_train(p, b, 5, 1e-3, 500, np.random.default_rng(0))  # clamped to full batch
    assert loss(after, b) <= loss(p, b)


def test_separable_blobs_reach_full_accuracy():
    data = synth_blobs(50, 2, 2, 0.1, seed=0, min_separation=3.0)
    p = local_train(init_model([2, 8, 2], 0), data, 50, 0.1, 10, np.random.default_rng(0))
    assert evaluate(p, data)[0] == 1.0


def test_random_params_near_chance():
    data = synth_blobs(100, 4, 2, 1.0, seed=1)
    accs = [evaluate(init_model([2, 4], s), data)[0] for s in range(40)]
    sd = math.sqrt(0.25 * 0.75 / len(data)) + 0.2 / math.sqrt(40)
    assert abs(np.mean(accs) - 0.25) < 3 * sd


def test_merge_examples():
    a = ModelParams(np.ones(2), (1, 1))
    b = ModelParams(np.zeros(2), (1, 1))
    assert np.array_equal(weighted_merge(a, b, 1.0).values, a.values)
    assert np.allclose(weighted_merge(a, b, 0.2).values, 0.2)
    with pytest.raises(ValueError):
        weighted_merge(a, b, 1.1)


vectors = st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2)


@given(vectors, vectors, st.floats(0, 1))
def test_merge_convexity(x, y, w):
    a, b = ModelParams(np.array(x), (1, 1)), ModelParams(np.array(y), (1, 1))
    out = weighted_merge(a, b, w).values
    lo, hi = np.minimum(a.values, b.values), np.maximum(a.values, b.values)
    tol = 1e-9 * (1 + np.abs(hi))
    assert np.all(out >= lo - tol) and np.all(out <= hi + tol)
    assert np.array_equal(weighted_merge(a, b, 0.5).values, weighted_merge(b, a, 0.5).values)


def test_save_load_roundtrip(tmp_path):
    p = init_model([3, 4, 2], 9)
    save_params(p, tmp_path / "m.bin", seed=9)
    q = load_params(tmp_path / "m.bin")
    assert q.shape == p.shape and np.array_equal(q.values, p.values)
    assert (tmp_path / "m.json").exists()
    (tmp_path / "bad.bin").write_bytes((tmp_path / "m.bin").read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad.bin")


def test_hyperparams_validation():
    HyperParams()
    with pytest.raises(ValueError):
        HyperParams(lr=0)
    with pytest.raises(ValueError):
        HyperParams(batch_size=0)
