"""Engine tests: losses and gradients against brute-force oracles."""

import math

import numpy as np
import pytest

from fedequity.data_fabric import ClientDataset
from fedequity.fl_engine import (
    LocalUpdate,
    ModelParams,
    TrainConfig,
    aggregate,
    evaluate,
    global_loss,
    local_loss,
    local_train,
    sample_gradient,
    sample_loss,
)


def params_from(vector, num_classes, num_features):
    return ModelParams(np.asarray(vector, dtype=float), num_classes, num_features)


def dataset(features, labels, client_id=0, **kwargs):
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    return ClientDataset(
        client_id=client_id,
        features=features,
        labels=labels,
        num_classes=int(labels.max()) + 1 if "num_classes" not in kwargs else kwargs.pop("num_classes"),
        true_n_class=len(np.unique(labels)),
        **kwargs,
    )


def oracle_loss(vector, num_classes, num_features, x, y):
    """Direct exponentiation/normalization, no shared code with the engine."""
    weights = [vector[c * num_features : (c + 1) * num_features] for c in range(num_classes)]
    biases = vector[num_classes * num_features :]
    scores = [sum(w * xi for w, xi in zip(weights[c], x)) + biases[c] for c in range(num_classes)]
    exps = [math.exp(s) for s in scores]
    return -math.log(exps[y] / sum(exps))


class TestSampleLoss:
    def test_zero_weights_binary(self):
        params = ModelParams.zeros(2, 3)
        assert sample_loss(params, np.array([1.0, -2.0, 0.5]), 1) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_confident_correct_prediction(self):
        vector = np.zeros(2 * 3)
        vector[0:2] = 50.0  # class 0 weights on positive features
        params = params_from(vector, 2, 2)
        assert sample_loss(params, np.array([1.0, 1.0]), 0) < 1e-12

    def test_matches_bruteforce_oracle(self):
        vector = np.array([0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.05, -0.15, 0.25, -0.1, 0.3, 0.0])
        params = params_from(vector, 3, 3)  # 3 classes x (3 features + bias)
        x = np.array([0.7, -1.2, 0.4])
        for y in range(3):
            expected = oracle_loss(vector, 3, 3, x, y)
            assert sample_loss(params, x, y) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        params = ModelParams.zeros(2, 3)
        with pytest.raises(ValueError, match="feature vector"):
            sample_loss(params, np.array([1.0, 2.0]), 0)
        with pytest.raises(ValueError, match="label"):
            sample_loss(params, np.array([1.0, 2.0, 3.0]), 5)


class TestLocalLoss:
    def test_single_sample(self):
        params = ModelParams.zeros(2, 2)
        ds = dataset([[1.0, 0.0]], [1], num_classes=2)
        assert local_loss(params, ds) == pytest.approx(
            sample_loss(params, ds.features[0], 1), abs=1e-15
        )

    def test_two_samples_mean(self):
        rng = np.random.default_rng(0)
        params = params_from(rng.normal(size=2 * 3), 2, 2)
        ds = dataset(rng.normal(size=(2, 2)), [0, 1], num_classes=2)
        a = sample_loss(params, ds.features[0], 0)
        b = sample_loss(params, ds.features[1], 1)
        assert local_loss(params, ds) == pytest.approx((a + b) / 2, abs=1e-12)

    def test_hundred_samples_summation_oracle(self):
        rng = np.random.default_rng(1)
        params = params_from(rng.normal(size=4 * 6), 4, 5)
        ds = dataset(rng.normal(size=(100, 5)), rng.integers(0, 4, size=100), num_classes=4)
        expected = math.fsum(
            sample_loss(params, x, y) for x, y in zip(ds.features, ds.labels)
        ) / 100
        assert local_loss(params, ds) == pytest.approx(expected, abs=1e-12)

    def test_empty_dataset(self):
        params = ModelParams.zeros(2, 2)
        ds = dataset(np.zeros((1, 2)), [0], num_classes=2)
        ds.features = np.zeros((0, 2))
        ds.labels = np.zeros(0, dtype=int)
        with pytest.raises(ValueError, match="empty"):
            local_loss(params, ds)


class TestGlobalLoss:
    def test_identical_single_sample_clients(self):
        params = ModelParams.zeros(3, 2)
        clients = [dataset([[0.5, 0.5]], [2], client_id=i, num_classes=3) for i in range(4)]
        expected = sample_loss(params, np.array([0.5, 0.5]), 2)
        assert global_loss(params, clients) == pytest.approx(expected, abs=1e-12)

    def test_pooled_mean_weighted_by_size(self):
        rng = np.random.default_rng(2)
        params = params_from(rng.normal(size=2 * 4), 2, 3)
        a = dataset(rng.normal(size=(1, 3)), [0], client_id=0, num_classes=2)
        b = dataset(rng.normal(size=(3, 3)), [1, 0, 1], client_id=1, num_classes=2)
        pooled = [
            sample_loss(params, x, y)
            for ds in (a, b)
            for x, y in zip(ds.features, ds.labels)
        ]
        assert global_loss(params, [a, b]) == pytest.approx(math.fsum(pooled) / 4, abs=1e-12)

    def test_single_client_equals_local(self):
        rng = np.random.default_rng(3)
        params = params_from(rng.normal(size=2 * 3), 2, 2)
        ds = dataset(rng.normal(size=(5, 2)), rng.integers(0, 2, size=5), num_classes=2)
        assert global_loss(params, [ds]) == pytest.approx(local_loss(params, ds), abs=1e-15)

    def test_all_empty(self):
        params = ModelParams.zeros(2, 2)
        with pytest.raises(ValueError, match="empty"):
            global_loss(params, [])


def finite_difference_gradient(params, x, y, step=1e-5):
    grad = np.zeros_like(params.vector)
    for i in range(params.vector.size):
        plus = params.vector.copy()
        minus = params.vector.copy()
        plus[i] += step
        minus[i] -= step
        up = ModelParams(plus, params.num_classes, params.num_features)
        down = ModelParams(minus, params.num_classes, params.num_features)
        grad[i] = (sample_loss(up, x, y) - sample_loss(down, x, y)) / (2 * step)
    return grad


class TestSampleGradient:
    def test_zero_weights_binary_residual(self):
        # Uniform softmax puts 0.5 on each class, so the true-class
        # weight row gradient is -0.5 x and the other row +0.5 x.
        params = ModelParams.zeros(2, 3)
        x = np.array([2.0, -1.0, 0.5])
        grad = sample_gradient(params, x, 0)
        np.testing.assert_allclose(grad[0:3], -0.5 * x, atol=1e-12)
        np.testing.assert_allclose(grad[3:6], 0.5 * x, atol=1e-12)
        np.testing.assert_allclose(grad[6:], [-0.5, 0.5], atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            num_classes = int(rng.integers(2, 5))
            num_features = int(rng.integers(1, 6))
            params = params_from(
                rng.normal(scale=0.8, size=num_classes * (num_features + 1)),
                num_classes,
                num_features,
            )
            x = rng.normal(size=num_features)
            y = int(rng.integers(0, num_classes))
            analytic = sample_gradient(params, x, y)
            numeric = finite_difference_gradient(params, x, y)
            denom = max(np.linalg.norm(numeric), 1e-12)
            assert np.linalg.norm(analytic - numeric) / denom < 1e-6

    def test_confident_prediction_vanishing_gradient(self):
        vector = np.zeros(2 * 3)
        vector[0:2] = 60.0
        params = params_from(vector, 2, 2)
        grad = sample_gradient(params, np.array([1.0, 1.0]), 0)
        assert np.linalg.norm(grad) < 1e-12


class TestLocalTrain:
    def test_zero_learning_rate_zero_delta(self):
        rng = np.random.default_rng(5)
        params = params_from(rng.normal(size=2 * 3), 2, 2)
        ds = dataset(rng.normal(size=(6, 2)), rng.integers(0, 2, size=6), num_classes=2)
        update = local_train(params, ds, TrainConfig(local_lr=0.0), seed=0)
        np.testing.assert_array_equal(update.delta, np.zeros(6))
        assert update.sample_count == 6

    def test_single_full_batch_step_matches_gradient(self):
        # One epoch, one full batch, one step: the delta must equal
        # -lr times the mean of the per-sample gradients.
        rng = np.random.default_rng(6)
        params = params_from(rng.normal(size=3 * 4), 3, 3)
        ds = dataset(rng.normal(size=(5, 3)), rng.integers(0, 3, size=5), num_classes=3)
        cfg = TrainConfig(local_epochs=1, batch_size=5, local_lr=0.3)
        update = local_train(params, ds, cfg, seed=9)
        mean_grad = np.mean(
            [sample_gradient(params, x, y) for x, y in zip(ds.features, ds.labels)], axis=0
        )
        np.testing.assert_allclose(update.delta, -0.3 * mean_grad, atol=1e-12)

    def test_identical_seeds_identical_updates(self):
        rng = np.random.default_rng(7)
        params = params_from(rng.normal(size=2 * 4), 2, 3)
        ds = dataset(rng.normal(size=(10, 3)), rng.integers(0, 2, size=10), num_classes=2)
        cfg = TrainConfig(local_epochs=3, batch_size=4, local_lr=0.1)
        first = local_train(params, ds, cfg, seed=123)
        second = local_train(params, ds, cfg, seed=123)
        np.testing.assert_array_equal(first.delta, second.delta)
        assert first.local_loss == second.local_loss

    def test_divergence_names_client(self):
        rng = np.random.default_rng(8)
        params = params_from(rng.normal(size=2 * 3), 2, 2)
        ds = dataset(rng.normal(size=(4, 2)) * 100, [0, 1, 0, 1], client_id=13, num_classes=2)
        with np.errstate(all="ignore"), pytest.raises(ValueError, match="client 13"):
            local_train(params, ds, TrainConfig(local_epochs=3, batch_size=1, local_lr=1e307), seed=0)


class TestAggregate:
    def test_mean_of_two_deltas(self):
        params = ModelParams.zeros(1, 1)
        updates = [
            LocalUpdate(0, np.array([1.0, 1.0]), 1, 0.0),
            LocalUpdate(1, np.array([3.0, 3.0]), 1, 0.0),
        ]
        out = aggregate(params, updates, global_lr=1.0)
        np.testing.assert_allclose(out.vector, [2.0, 2.0], atol=1e-15)

    def test_single_update_adopts_client_params(self):
        rng = np.random.default_rng(9)
        params = params_from(rng.normal(size=2 * 3), 2, 2)
        local_vector = rng.normal(size=6)
        update = LocalUpdate(0, local_vector - params.vector, 4, 0.0)
        out = aggregate(params, [update], global_lr=1.0)
        np.testing.assert_allclose(out.vector, local_vector, atol=1e-12)

    def test_elementwise_mean_oracle_and_permutation(self):
        rng = np.random.default_rng(10)
        params = params_from(rng.normal(size=2 * 3), 2, 2)
        deltas = [rng.normal(size=6) for _ in range(5)]
        updates = [LocalUpdate(i, d, i + 1, 0.0) for i, d in enumerate(deltas)]
        out = aggregate(params, updates, global_lr=0.7)
        expected = params.vector.copy()
        for j in range(6):
            expected[j] += 0.7 * math.fsum(d[j] for d in deltas) / 5
        np.testing.assert_allclose(out.vector, expected, rtol=1e-12, atol=1e-12)

        shuffled = [updates[i] for i in (3, 0, 4, 1, 2)]
        out2 = aggregate(params, shuffled, global_lr=0.7)
        np.testing.assert_allclose(out2.vector, out.vector, rtol=1e-9, atol=1e-9)

    def test_sample_weighted_variant(self):
        params = ModelParams.zeros(1, 1)
        updates = [
            LocalUpdate(0, np.array([1.0, 0.0]), 1, 0.0),
            LocalUpdate(1, np.array([4.0, 0.0]), 3, 0.0),
        ]
        out = aggregate(params, updates, global_lr=1.0, sample_weighted=True)
        assert out.vector[0] == pytest.approx((1 * 1 + 3 * 4) / 4, abs=1e-15)

    def test_empty_updates(self):
        with pytest.raises(ValueError, match="no local updates"):
            aggregate(ModelParams.zeros(1, 1), [], global_lr=1.0)


class TestEvaluate:
    def test_uniform_model_balanced_binary(self):
        # Argmax ties break toward class 0, so a balanced set scores 0.5.
        params = ModelParams.zeros(2, 2)
        features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
        labels = np.array([0, 0, 1, 1])
        accuracy, loss = evaluate(params, features, labels)
        assert accuracy == 0.5
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_converged_separable_problem(self):
        rng = np.random.default_rng(11)
        centers = np.array([[-4.0, 0.0], [4.0, 0.0]])
        features = np.concatenate([centers[c] + rng.normal(scale=0.3, size=(30, 2)) for c in range(2)])
        labels = np.repeat([0, 1], 30)
        ds = dataset(features, labels, num_classes=2)
        params = ModelParams.zeros(2, 2)
        cfg = TrainConfig(local_epochs=60, batch_size=60, local_lr=0.5)
        update = local_train(params, ds, cfg, seed=0)
        trained = aggregate(params, [update], global_lr=1.0)
        accuracy, _ = evaluate(trained, features, labels)
        assert accuracy == 1.0

    def test_single_correct_sample(self):
        vector = np.array([5.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        params = params_from(vector, 2, 2)
        x = np.array([[1.0, 0.0]])
        y = np.array([0])
        accuracy, loss = evaluate(params, x, y)
        assert accuracy == 1.0
        assert loss == pytest.approx(sample_loss(params, x[0], 0), abs=1e-15)

    def test_empty_test_set(self):
        with pytest.raises(ValueError, match="empty"):
            evaluate(ModelParams.zeros(2, 2), np.zeros((0, 2)), np.zeros(0, dtype=int))


def test_full_batch_descent_decreases_global_loss():
    # Smoke property: gradient descent with a small step strictly
    # decreases the pooled loss for 20 consecutive steps.
    rng = np.random.default_rng(12)
    params = params_from(rng.normal(scale=0.1, size=3 * 5), 3, 4)
    ds = dataset(rng.normal(size=(60, 4)), rng.integers(0, 3, size=60), num_classes=3)
    cfg = TrainConfig(local_epochs=1, batch_size=60, local_lr=0.2)
    losses = [local_loss(params, ds)]
    for step in range(20):
        update = local_train(params, ds, cfg, seed=step)
        params = aggregate(params, [update], global_lr=1.0)
        losses.append(local_loss(params, ds))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_deterministic_trajectory_bit_identical():
    rng = np.random.default_rng(13)
    ds = dataset(rng.normal(size=(20, 3)), rng.integers(0, 2, size=20), num_classes=2)
    cfg = TrainConfig(local_epochs=2, batch_size=5, local_lr=0.1)

    def trajectory():
        params = ModelParams.zeros(2, 3)
        vectors = []
        for round_k in range(5):
            update = local_train(params, ds, cfg, seed=round_k)
            params = aggregate(params, [update], global_lr=1.0)
            vectors.append(params.vector.copy())
        return vectors

    for a, b in zip(trajectory(), trajectory()):
        assert a.tobytes() == b.tobytes()
