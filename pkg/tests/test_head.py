"""Dense head: init statistics, forward/backward, optimizers, training."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import centroid_dataset
from scoutcv.errors import ModelFormatError, TrainingDiverged
from scoutcv.head import (
    HeadConfig,
    HeadModel,
    HiddenLayer,
    OptimizerSpec,
    OptimizerState,
    TrainConfig,
    backward,
    forward,
    init_head,
    load_model,
    loss_cross_entropy,
    optimizer_step,
    predict,
    predict_one,
    save_model,
    train,
)


def flatten_params(model: HeadModel) -> np.ndarray:
    return np.concatenate([p.ravel() for p in model.weights + model.biases])


def set_params(model: HeadModel, theta: np.ndarray) -> None:
    pos = 0
    for p in model.weights + model.biases:
        p[...] = theta[pos : pos + p.size].reshape(p.shape)
        pos += p.size


def numeric_gradient(model: HeadModel, x: np.ndarray, y: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the training loss over every parameter."""
    theta0 = flatten_params(model)
    grad = np.zeros_like(theta0)
    probe = model.copy()

    def loss_at(theta: np.ndarray) -> float:
        set_params(probe, theta)
        probs, _ = forward(probe, x, train_mode=True, dropout_rng=np.random.default_rng(0))
        return loss_cross_entropy(probs, y)

    for i in range(theta0.size):
        tp = theta0.copy()
        tp[i] += h
        tm = theta0.copy()
        tm[i] -= h
        grad[i] = (loss_at(tp) - loss_at(tm)) / (2 * h)
    return grad


def analytic_gradient(model: HeadModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    probs, cache = forward(model, x, train_mode=True, dropout_rng=np.random.default_rng(0))
    gw, gb = backward(model, cache, y)
    return np.concatenate([g.ravel() for g in gw + gb])


def random_differentiable_head(seed: int, kink_margin: float = 1e-3):
    """Random small head plus a batch at which the loss is differentiable.

    Central differences are only meaningful away from the relu kinks, so
    biases are jittered off zero and the batch is redrawn until every
    hidden pre-activation clears the margin (h = 1e-5 perturbations cannot
    cross it).
    """
    rng = np.random.default_rng(seed)
    widths = [int(w) for w in rng.integers(2, 17, size=rng.integers(0, 4))]
    cfg = HeadConfig.uniform(int(rng.integers(2, 17)), widths, init_seed=seed)
    model = init_head(cfg)
    for b in model.biases:
        b += rng.uniform(-0.2, 0.2, size=b.shape)
    batch = int(rng.integers(1, 9))
    for _ in range(100):
        x = rng.standard_normal((batch, cfg.input_dim))
        y = rng.integers(0, 5, size=batch)
        _, cache = forward(model, x, train_mode=True, dropout_rng=np.random.default_rng(0))
        if all(np.abs(z).min() > kink_margin for _, z, _ in cache["layers"]) or not cache["layers"]:
            return model, x, y
    raise AssertionError("could not find a kink-free evaluation point")


class TestInit:
    def test_zero_hidden_layers_shapes_and_zero_bias(self):
        model = init_head(HeadConfig(input_dim=8))
        assert len(model.weights) == 1
        assert model.weights[0].shape == (5, 8)
        np.testing.assert_array_equal(model.biases[0], np.zeros(5))

    def test_same_seed_identical(self):
        cfg = HeadConfig.uniform(16, [8, 8], init_seed=77)
        a, b = init_head(cfg), init_head(cfg)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_he_variance_matches_fan_in(self):
        # 100x100 hidden weight matrix gives 10k draws of the He law
        cfg = HeadConfig.uniform(100, [100], init_seed=3)
        model = init_head(cfg)
        var = model.weights[0].var()
        assert abs(var - 2.0 / 100) / (2.0 / 100) < 0.2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            HeadConfig(input_dim=0)
        with pytest.raises(ValueError):
            HeadConfig.uniform(4, [8] * 9)
        with pytest.raises(ValueError):
            HiddenLayer(width=4, dropout_rate=1.0)
        with pytest.raises(ValueError):
            HiddenLayer(width=4, activation="tanh")


class TestForward:
    def test_zero_parameters_give_uniform_probabilities(self):
        model = init_head(HeadConfig(input_dim=3))
        model.weights[0][...] = 0.0
        probs, _ = forward(model, np.random.default_rng(0).random((4, 3)))
        np.testing.assert_allclose(probs, 0.2, atol=1e-12)

    def test_eval_equals_train_without_dropout(self):
        model = init_head(HeadConfig.uniform(6, [8], dropout=0.0, init_seed=1))
        x = np.random.default_rng(2).random((5, 6))
        eval_probs, _ = forward(model, x)
        train_probs, cache = forward(model, x, train_mode=True, dropout_rng=np.random.default_rng(0))
        np.testing.assert_array_equal(eval_probs, train_probs)
        assert cache is not None

    def test_softmax_of_spiked_logits(self):
        # one logit at 10, rest at 0: p = e^10 / (e^10 + 4)
        model = init_head(HeadConfig(input_dim=5))
        model.weights[0][...] = 0.0
        model.biases[0][...] = np.array([10.0, 0, 0, 0, 0])
        probs, _ = forward(model, np.zeros((1, 5)))
        expected = math.exp(10) / (math.exp(10) + 4)
        assert probs[0, 0] == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.99982, abs=5e-6)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        model = init_head(HeadConfig.uniform(12, [16, 16], init_seed=4))
        probs, _ = forward(model, rng.standard_normal((64, 12)) * 10)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert (probs > 0).all()

    def test_rejects_bad_input(self):
        model = init_head(HeadConfig(input_dim=4))
        with pytest.raises(ValueError, match="batch width"):
            forward(model, np.zeros((2, 5)))
        with pytest.raises(ValueError, match="non-finite"):
            forward(model, np.array([[1.0, np.nan, 0, 0]]))


class TestLoss:
    def test_perfect_prediction_near_zero(self):
        probs = np.array([[1.0, 0, 0, 0, 0]])
        assert loss_cross_entropy(probs, np.array([0])) <= 1e-11

    def test_uniform_prediction_is_ln5(self):
        probs = np.full((3, 5), 0.2)
        assert loss_cross_entropy(probs, np.array([0, 2, 4])) == pytest.approx(
            math.log(5), abs=1e-12
        )

    def test_half_and_quarter_mean(self):
        probs = np.array([[0.5, 0.5, 0, 0, 0], [0.25, 0.25, 0.25, 0.25, 0]])
        expected = (math.log(2) + math.log(4)) / 2
        assert loss_cross_entropy(probs, np.array([0, 1])) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(1.03972, abs=5e-6)

    def test_clamp_removes_singularity(self):
        probs = np.array([[0.0, 1.0, 0, 0, 0]])
        assert np.isfinite(loss_cross_entropy(probs, np.array([0])))


class TestBackward:
    def test_softmax_ce_identity_zero_hidden(self):
        # single sample, no hidden layers: dW = (p - onehot) outer x
        rng = np.random.default_rng(8)
        model = init_head(HeadConfig(input_dim=6, init_seed=2))
        x = rng.standard_normal((1, 6))
        y = np.array([3])
        probs, cache = forward(model, x, train_mode=True, dropout_rng=rng)
        gw, gb = backward(model, cache, y)
        onehot = np.zeros(5)
        onehot[3] = 1.0
        np.testing.assert_allclose(gw[0], np.outer(probs[0] - onehot, x[0]), atol=1e-12)
        np.testing.assert_allclose(gb[0], probs[0] - onehot, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        model, x, y = random_differentiable_head(seed)
        analytic = analytic_gradient(model, x, y)
        numeric = numeric_gradient(model, x, y)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-10)

    def test_dropout_masked_unit_has_zero_gradients(self):
        cfg = HeadConfig.uniform(4, [6], dropout=0.5, init_seed=0)
        model = init_head(cfg)
        x = np.random.default_rng(1).standard_normal((1, 4))
        probs, cache = forward(model, x, train_mode=True, dropout_rng=np.random.default_rng(3))
        mask = cache["layers"][0][2]
        dropped = np.flatnonzero(mask[0] == 0.0)
        assert dropped.size > 0, "seed must drop at least one unit"
        gw, gb = backward(model, cache, np.array([2]))
        np.testing.assert_array_equal(gw[0][dropped, :], 0.0)
        np.testing.assert_array_equal(gb[0][dropped], 0.0)

    def test_dropout_expectation_matches_eval(self):
        # inverted dropout keeps the expected post-dropout activation equal
        # to the eval-mode activation; with 10k masks the mean relative
        # deviation over the live units must sit within 2%
        rate = 0.3
        cfg = HeadConfig.uniform(6, [10], dropout=rate, init_seed=5)
        model = init_head(cfg)
        x = np.abs(np.random.default_rng(2).standard_normal((1, 6))) + 0.1
        a_eval = np.maximum(x @ model.weights[0].T + model.biases[0], 0.0)
        rng = np.random.default_rng(11)
        n = 10_000
        total = np.zeros_like(a_eval)
        for _ in range(n):
            keep = rng.random(a_eval.shape) >= rate
            total += a_eval * keep / (1.0 - rate)
        mean_dropped = total / n
        alive = a_eval > 0
        assert alive.any()
        rel = np.abs(mean_dropped[alive] - a_eval[alive]) / a_eval[alive]
        assert rel.mean() < 0.02
        # dead units stay exactly dead under any mask
        np.testing.assert_array_equal(mean_dropped[~alive], 0.0)


class TestOptimizers:
    def _model(self) -> HeadModel:
        return init_head(HeadConfig(input_dim=3, init_seed=1))

    def test_plain_sgd_step(self):
        model = self._model()
        before = model.weights[0].copy()
        g = np.ones_like(before)
        state = OptimizerState(OptimizerSpec(kind="sgd_momentum", momentum=0.0), model)
        optimizer_step(state, model, [g], [np.zeros(5)], learning_rate=1.0)
        np.testing.assert_allclose(model.weights[0], before - g)

    def test_zero_gradient_is_identity_with_zero_velocity(self):
        model = self._model()
        before = flatten_params(model).copy()
        state = OptimizerState(OptimizerSpec(kind="sgd_momentum", momentum=0.9), model)
        optimizer_step(state, model, [np.zeros((5, 3))], [np.zeros(5)], learning_rate=0.5)
        np.testing.assert_array_equal(flatten_params(model), before)

    def test_momentum_accumulates_velocity(self):
        model = self._model()
        before = model.weights[0].copy()
        g = np.ones((5, 3))
        state = OptimizerState(OptimizerSpec(kind="sgd_momentum", momentum=0.5), model)
        optimizer_step(state, model, [g], [np.zeros(5)], 0.1)
        optimizer_step(state, model, [g], [np.zeros(5)], 0.1)
        # v1 = 1, v2 = 1.5, total displacement 0.25 per entry
        np.testing.assert_allclose(model.weights[0], before - 0.25)

    @pytest.mark.parametrize("scale", [1e-4, 1.0, 1e4])
    def test_adam_first_step_magnitude_is_lr(self, scale):
        # bias correction makes step one equal lr * g / (|g| + eps)
        model = self._model()
        before = model.weights[0].copy()
        g = np.full((5, 3), scale)
        state = OptimizerState(OptimizerSpec(kind="adam"), model)
        optimizer_step(state, model, [g], [np.zeros(5)], learning_rate=1e-3)
        step = before - model.weights[0]
        np.testing.assert_allclose(step, 1e-3, rtol=1e-3)


class TestTrain:
    def test_zero_learning_rate_is_identity(self):
        feats, labels = centroid_dataset(per_class=8, dim=6)
        cfg = HeadConfig.uniform(6, [4], init_seed=0)
        model = init_head(cfg)
        trained, history = train(
            model, feats, labels, TrainConfig(epochs=3, batch_size=8, learning_rate=0.0)
        )
        np.testing.assert_array_equal(flatten_params(trained), flatten_params(model))
        assert len(history.epoch_loss) == 3

    def test_separable_toy_reaches_full_accuracy(self):
        # two well-separated clusters in 2-d, binary labels on 5-way head
        rng = np.random.default_rng(0)
        a = rng.standard_normal((50, 2)) * 0.3 + np.array([3.0, 0.0])
        b = rng.standard_normal((50, 2)) * 0.3 + np.array([-3.0, 0.0])
        feats = np.concatenate([a, b])
        labels = np.array([0] * 50 + [1] * 50)
        cfg = HeadConfig.uniform(2, [8], init_seed=1)
        trained, history = train(
            init_head(cfg),
            feats,
            labels,
            TrainConfig(epochs=200, batch_size=16, learning_rate=1e-3),
        )
        assert history.epoch_accuracy[-1] == 1.0
        assert history.epoch_loss[-1] < history.epoch_loss[0]

    def test_bit_identical_reruns(self):
        feats, labels = centroid_dataset(per_class=20, dim=8)
        cfg = HeadConfig.uniform(8, [8], dropout=0.2, init_seed=9)
        tc = TrainConfig(epochs=5, batch_size=16, learning_rate=1e-3, shuffle_seed=4, dropout_seed=5)
        m1, h1 = train(init_head(cfg), feats, labels, tc)
        m2, h2 = train(init_head(cfg), feats, labels, tc)
        np.testing.assert_array_equal(flatten_params(m1), flatten_params(m2))
        assert h1.epoch_loss == h2.epoch_loss

    def test_divergence_aborts_with_position(self):
        feats, labels = centroid_dataset(per_class=10, dim=5, separation=50.0)
        cfg = HeadConfig.uniform(5, [8], init_seed=0)
        tc = TrainConfig(
            epochs=5,
            batch_size=10,
            learning_rate=1e18,
            optimizer=OptimizerSpec(kind="sgd_momentum", momentum=0.0),
        )
        with pytest.raises(TrainingDiverged) as exc:
            train(init_head(cfg), feats, labels, tc)
        assert exc.value.epoch >= 0 and exc.value.step >= 0

    def test_batch_size_larger_than_dataset_rejected(self):
        feats, labels = centroid_dataset(per_class=2, dim=5)
        with pytest.raises(ValueError, match="batch_size"):
            train(
                init_head(HeadConfig(input_dim=5)),
                feats,
                labels,
                TrainConfig(epochs=1, batch_size=100, learning_rate=1e-3),
            )


class TestPredict:
    def test_uniform_probabilities_tie_break_to_lowest(self):
        model = init_head(HeadConfig(input_dim=3))
        model.weights[0][...] = 0.0
        cls, probs = predict_one(model, np.ones(3))
        assert cls.value == 0
        np.testing.assert_allclose(probs, 0.2)

    def test_dominant_probability_wins(self):
        model = init_head(HeadConfig(input_dim=5))
        model.weights[0][...] = 0.0
        model.biases[0][...] = np.array([0.0, 0, 0, 0, 3.0])
        cls, _ = predict_one(model, np.zeros(5))
        assert cls.value == 4

    def test_shift_invariance_of_argmax(self):
        rng = np.random.default_rng(3)
        model = init_head(HeadConfig.uniform(6, [8], init_seed=2))
        x = rng.standard_normal((20, 6))
        base, _ = predict(model, x)
        shifted = model.copy()
        shifted.biases[-1] += 17.5
        after, _ = predict(shifted, x)
        np.testing.assert_array_equal(base, after)

    def test_dim_mismatch(self):
        model = init_head(HeadConfig(input_dim=4))
        with pytest.raises(ValueError):
            predict_one(model, np.zeros(5))


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = HeadConfig.uniform(12, [16, 8], dropout=0.25, init_seed=6)
        model, _ = train(
            init_head(cfg),
            *centroid_dataset(per_class=10, dim=12),
            TrainConfig(epochs=2, batch_size=10, learning_rate=1e-3),
        )
        path = tmp_path / "model.bin"
        save_model(model, path)
        again = load_model(path)
        assert again.config == model.config
        np.testing.assert_array_equal(flatten_params(again), flatten_params(model))

    def test_truncated_and_corrupt_files_rejected(self, tmp_path):
        cfg = HeadConfig(input_dim=4, init_seed=0)
        path = tmp_path / "model.bin"
        save_model(init_head(cfg), path)
        data = path.read_bytes()
        (tmp_path / "trunc.bin").write_bytes(data[:-4])
        with pytest.raises(ModelFormatError, match="truncated"):
            load_model(tmp_path / "trunc.bin")
        (tmp_path / "bad.bin").write_bytes(b"XXXX" + data[4:])
        with pytest.raises(ModelFormatError, match="not a head model"):
            load_model(tmp_path / "bad.bin")
