import numpy as np
import pytest

from dccfl.learner import (
    MLPParams,
    TrainConfig,
    TrainingDiverged,
    cross_entropy_loss,
    evaluate,
    forward,
    grad_check,
    init_mlp,
    params_from_blob,
    params_to_blob,
    predict_proba,
    train,
)


def random_instance(seed, n=16, d=5, hidden=(8, 6), k=3):
    rng = np.random.default_rng(seed)
    params = init_mlp(d, hidden, k, seed)
    x = rng.normal(0.0, 1.0, (n, d))
    y = rng.integers(0, k, n)
    return params, x, y


def two_blobs(n_per=50, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.5, (n_per, 2)) + [3.0, 3.0]
    b = rng.normal(0.0, 0.5, (n_per, 2)) + [-3.0, -3.0]
    x = np.concatenate([a, b])
    y = np.array([0] * n_per + [1] * n_per)
    return x, y


def zero_params(d, hidden, k):
    return MLPParams(
        w1=np.zeros((d, hidden[0])),
        b1=np.zeros(hidden[0]),
        w2=np.zeros((hidden[0], hidden[1])),
        b2=np.zeros(hidden[1]),
        w3=np.zeros((hidden[1], k)),
        b3=np.zeros(k),
    )


# ------------------------------------------------------------------- init_mlp


def test_init_deterministic():
    a = init_mlp(6, (8, 4), 3, seed=7)
    b = init_mlp(6, (8, 4), 3, seed=7)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))


def test_init_zero_biases():
    params = init_mlp(5, (4, 3), 2, seed=0)
    assert np.all(params.b1 == 0) and np.all(params.b2 == 0) and np.all(params.b3 == 0)


def test_init_paper_shapes():
    params = init_mlp(10, (64, 32), 7, seed=1)
    assert params.w1.shape == (10, 64)
    assert params.w2.shape == (64, 32)
    assert params.w3.shape == (32, 7)


def test_init_glorot_bound():
    params = init_mlp(30, (20, 10), 4, seed=2)
    bound = np.sqrt(6.0 / (30 + 20))
    assert np.abs(params.w1).max() <= bound


def test_init_bad_dims():
    with pytest.raises(ValueError):
        init_mlp(0, (4, 4), 2, seed=0)


# -------------------------------------------------------------------- forward


def test_forward_zero_params_zero_logits():
    params = zero_params(4, (5, 3), 2)
    logits = forward(params, np.random.default_rng(0).normal(size=(6, 4)))
    assert np.all(logits == 0.0)
    probs = predict_proba(params, np.zeros((2, 4)))
    np.testing.assert_allclose(probs, 0.5)


def test_forward_row_independence():
    params, x, _ = random_instance(3)
    row = x[:1]
    batch = np.repeat(row, 5, axis=0)
    logits = forward(params, batch)
    assert np.all(logits == logits[0])


def test_forward_hidden_nonnegative():
    from dccfl.learner import _forward_parts

    params, x, _ = random_instance(4)
    _, h1, _, h2, _ = _forward_parts(params, x)
    assert np.all(h1 >= 0) and np.all(h2 >= 0)


def test_forward_shape_mismatch():
    params, _, _ = random_instance(5)
    with pytest.raises(ValueError, match="input columns"):
        forward(params, np.zeros((2, 9)))


def test_softmax_rows_sum_to_one():
    params, x, _ = random_instance(6, n=40)
    probs = predict_proba(params, x * 50.0)  # large logits stress stability
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)


# ---------------------------------------------------------------------- train


def test_train_separable_blobs():
    x, y = two_blobs()
    params = init_mlp(2, (16, 8), 2, seed=0)
    cfg = TrainConfig(learning_rate=0.01, momentum=0.5, batch_size=32, epochs=50, seed=1)
    fitted = train(params, x, y, cfg)
    assert evaluate(fitted, x, y) >= 0.99


def test_train_one_epoch_changes_params():
    params, x, y = random_instance(7, n=64)
    fitted = train(params, x, y, TrainConfig(epochs=1, seed=2))
    assert any(not np.array_equal(a, b) for a, b in zip(params.arrays(), fitted.arrays()))


def test_train_reduces_loss():
    params, x, y = random_instance(8, n=128)
    cfg = TrainConfig(epochs=20, seed=3)
    fitted = train(params, x, y, cfg)
    assert cross_entropy_loss(fitted, x, y) <= cross_entropy_loss(params, x, y)


def test_train_deterministic_bitwise():
    params, x, y = random_instance(9, n=80)
    cfg = TrainConfig(epochs=5, seed=4)
    a = train(params, x, y, cfg)
    b = train(params, x, y, cfg)
    assert all(u.tobytes() == v.tobytes() for u, v in zip(a.arrays(), b.arrays()))


def test_train_does_not_mutate_input():
    params, x, y = random_instance(10, n=32)
    before = [a.copy() for a in params.arrays()]
    train(params, x, y, TrainConfig(epochs=2, seed=5))
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), before))


def test_train_label_out_of_range():
    params, x, y = random_instance(11)
    with pytest.raises(ValueError, match="num_classes"):
        train(params, x, np.full_like(y, 99), TrainConfig(epochs=1))


def test_train_divergence_detected():
    x, y = two_blobs(n_per=30, seed=12)
    params = init_mlp(2, (8, 4), 2, seed=0)
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
        train(params, x * 1e150, y, TrainConfig(learning_rate=1e10, epochs=5, seed=0))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)


# ------------------------------------------------------------------- evaluate


def test_evaluate_perfect_and_constant():
    # output bias picks class 0 regardless of input
    params = zero_params(3, (4, 4), 2)
    biased = MLPParams(
        params.w1, params.b1, params.w2, params.b2, params.w3, np.array([1.0, 0.0])
    )
    x = np.random.default_rng(13).normal(size=(40, 3))
    y_all_zero = np.zeros(40, dtype=int)
    assert evaluate(biased, x, y_all_zero) == 1.0
    y_balanced = np.array([0, 1] * 20)
    assert evaluate(biased, x, y_balanced) == 0.5


def test_evaluate_random_params_chance_level():
    rng = np.random.default_rng(14)
    k = 4
    params = init_mlp(6, (16, 8), k, seed=15)
    x = rng.normal(size=(1000, 6))
    y = rng.integers(0, k, 1000)
    acc = evaluate(params, x, y)
    assert abs(acc - 1.0 / k) < 0.1


def test_evaluate_empty():
    params, _, _ = random_instance(16)
    with pytest.raises(ValueError, match="empty"):
        evaluate(params, np.zeros((0, 5)), np.zeros(0, dtype=int))


def test_evaluate_argmax_tie_toward_smaller():
    params = zero_params(3, (4, 4), 3)  # all logits equal -> predict class 0
    x = np.ones((5, 3))
    assert evaluate(params, x, np.zeros(5, dtype=int)) == 1.0
    assert evaluate(params, x, np.ones(5, dtype=int)) == 0.0


# ----------------------------------------------------------------- grad_check


def test_grad_check_random_instance():
    params, x, y = random_instance(17, n=12)
    assert grad_check(params, x, y, eps=1e-5) < 1e-4


def test_grad_check_zero_point_bias():
    # all-zero weights with balanced labels: softmax is uniform and matches
    # the target mean, so output-layer bias gradients are exactly zero
    params = zero_params(4, (6, 5), 2)
    x = np.random.default_rng(18).normal(size=(8, 4))
    y = np.array([0, 1] * 4)
    from dccfl.learner import _gradients

    grads, _ = _gradients(params, x, y)
    np.testing.assert_allclose(grads[5], 0.0, atol=1e-15)
    assert grad_check(params, x, y, eps=1e-5) < 1e-4


def test_grad_check_eps_stability():
    params, x, y = random_instance(19, n=10)
    fine = grad_check(params, x, y, eps=1e-6)
    coarse = grad_check(params, x, y, eps=1e-5)
    assert (fine < 1e-4) == (coarse < 1e-4)


def test_grad_check_subset_for_large_net():
    params, x, y = random_instance(20, n=8, d=20, hidden=(32, 16), k=5)
    assert params.num_params() > 200
    assert grad_check(params, x, y, eps=1e-5, max_checked=50) < 1e-4


def test_grad_check_eps_validation():
    params, x, y = random_instance(21)
    for eps in (0.0, -1e-5, 1e-2):
        with pytest.raises(ValueError):
            grad_check(params, x, y, eps=eps)


# --------------------------------------------------------------- serialization


def test_params_blob_roundtrip():
    params = init_mlp(7, (10, 6), 4, seed=22)
    header, blob = params_to_blob(params)
    back = params_from_blob(header, blob)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), back.arrays()))
    assert len(blob) == 8 * params.num_params()


def test_params_blob_bad_size():
    params = init_mlp(3, (4, 4), 2, seed=23)
    header, blob = params_to_blob(params)
    with pytest.raises(ValueError, match="blob size"):
        params_from_blob(header, blob + b"\x00" * 8)
