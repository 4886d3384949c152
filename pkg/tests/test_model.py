import math

import numpy as np
import pytest

from prototrain.errors import ConfigError, DataError
from prototrain.model import (
    ARCH_HIDDEN,
    ARCH_LINEAR,
    ClassifierModel,
    OptimConfig,
    OptimState,
    TrainerState,
    backward,
    cross_entropy,
    joint_loss,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)


def finite_difference_grads(model, x, y, y_hat, alpha, h=1e-4):
    """Central-difference gradient of the joint loss for every parameter entry."""

    def loss():
        probs, _ = model.forward(x)
        if y_hat is None:
            return cross_entropy(probs, y)
        return joint_loss(probs, y, y_hat, alpha)

    grads = {}
    for name in model.param_names():
        p = model.params[name]
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss()
            p[idx] = orig - h
            down = loss()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def gradient_gap(analytic, numeric):
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        scale = max(1.0, np.abs(n).max())
        worst = max(worst, np.abs(a - n).max() / scale)
    return worst


def random_model(rng, arch):
    d = int(rng.integers(2, 8))
    k = int(rng.integers(2, 5))
    h = int(rng.integers(2, 6))
    model = ClassifierModel.create(arch, d, k, h if arch == ARCH_HIDDEN else 0, seed=int(rng.integers(1 << 30)))
    for name in model.param_names():
        model.params[name] += rng.normal(scale=0.3, size=model.params[name].shape)
    n = int(rng.integers(1, 6))
    x = rng.normal(size=(n, d))
    y = rng.integers(0, k, size=n)
    y_hat = rng.integers(0, k, size=n)
    alpha = float(rng.uniform(0, 1))
    return model, x, y, y_hat, alpha


class TestForward:
    def test_zero_parameters_give_uniform(self):
        model = ClassifierModel(ARCH_LINEAR, 3, 4)
        probs, _ = model.forward(np.random.default_rng(0).normal(size=(5, 3)))
        assert np.abs(probs - 0.25).max() < 1e-12

    def test_linear_features_are_inputs(self):
        model = ClassifierModel.create(ARCH_LINEAR, 4, 3, seed=1)
        x = np.random.default_rng(1).normal(size=(6, 4))
        _, feats = model.forward(x)
        assert np.array_equal(feats, x)

    def test_rows_sum_to_one(self):
        model = ClassifierModel.create(ARCH_HIDDEN, 5, 3, hidden=7, seed=2)
        probs, feats = model.forward(np.random.default_rng(2).normal(size=(10, 5)) * 10)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6
        assert (probs > 0).all()
        assert feats.shape == (10, 7)

    def test_shape_mismatch(self):
        model = ClassifierModel.create(ARCH_LINEAR, 4, 3, seed=1)
        with pytest.raises(ValueError):
            model.forward(np.zeros((2, 5)))

    def test_deterministic_init(self):
        a = ClassifierModel.create(ARCH_HIDDEN, 4, 3, hidden=6, seed=9)
        b = ClassifierModel.create(ARCH_HIDDEN, 4, 3, hidden=6, seed=9)
        for name in a.param_names():
            assert np.array_equal(a.params[name], b.params[name])
        bounds = math.sqrt(6.0 / (4 + 6))
        assert np.abs(a.params["W1"]).max() <= bounds


class TestLosses:
    def test_certain_prediction_zero_loss(self):
        probs = np.array([[1.0, 0.0]])
        assert cross_entropy(probs, np.array([0])) == 0.0

    def test_uniform_probs(self):
        probs = np.full((3, 4), 0.25)
        assert cross_entropy(probs, np.array([0, 1, 3])) == pytest.approx(math.log(4), abs=1e-12)

    def test_hand_case(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        expected = -(math.log(0.9) + math.log(0.8)) / 2
        assert cross_entropy(probs, np.array([0, 1])) == pytest.approx(expected, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy(np.array([[0.5, 0.5]]), np.array([2]))

    def test_joint_loss_endpoints(self):
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(3), size=4)
        y = rng.integers(0, 3, size=4)
        y_hat = rng.integers(0, 3, size=4)
        assert joint_loss(probs, y, y_hat, 0.0) == cross_entropy(probs, y)
        assert joint_loss(probs, y, y_hat, 1.0) == cross_entropy(probs, y_hat)

    def test_joint_loss_analytic_midpoint(self):
        probs = np.array([[0.5, 0.5]])
        val = joint_loss(probs, np.array([0]), np.array([1]), 0.5)
        assert val == pytest.approx(math.log(2), abs=1e-12)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            joint_loss(np.array([[1.0, 0.0]]), np.array([0]), np.array([0]), 1.5)


class TestBackward:
    def test_linear_closed_form(self):
        rng = np.random.default_rng(4)
        model = ClassifierModel.create(ARCH_LINEAR, 3, 2, seed=5)
        x = rng.normal(size=(1, 3))
        y, y_hat, alpha = np.array([0]), np.array([1]), 0.3
        probs, _ = model.forward(x)
        grads = backward(model, x, y, y_hat, alpha)
        target = np.zeros(2)
        target[0] += 1 - alpha
        target[1] += alpha
        expected_w = np.outer(probs[0] - target, x[0])
        assert np.abs(grads["W"] - expected_w).max() < 1e-12
        assert np.abs(grads["b"] - (probs[0] - target)).max() < 1e-12

    def test_alpha_irrelevant_when_targets_coincide(self):
        rng = np.random.default_rng(5)
        model = ClassifierModel.create(ARCH_HIDDEN, 4, 3, hidden=5, seed=6)
        x = rng.normal(size=(4, 4))
        y = rng.integers(0, 3, size=4)
        g0 = backward(model, x, y, y.copy(), 0.0)
        g7 = backward(model, x, y, y.copy(), 0.7)
        for name in g0:
            assert np.abs(g0[name] - g7[name]).max() < 1e-15

    @pytest.mark.parametrize("arch", [ARCH_LINEAR, ARCH_HIDDEN])
    def test_matches_finite_differences(self, arch):
        rng = np.random.default_rng(11 if arch == ARCH_LINEAR else 13)
        for _ in range(10):
            model, x, y, y_hat, alpha = random_model(rng, arch)
            analytic = backward(model, x, y, y_hat, alpha)
            numeric = finite_difference_grads(model, x, y, y_hat, alpha)
            assert gradient_gap(analytic, numeric) < 1e-5


class TestSgd:
    def scalar_model(self, theta):
        model = ClassifierModel(ARCH_LINEAR, 1, 2)
        model.params["W"][0, 0] = theta
        return model

    def test_plain_step_without_momentum(self):
        model = ClassifierModel.create(ARCH_LINEAR, 2, 2, seed=1)
        before = {k: v.copy() for k, v in model.params.items()}
        grads = {k: np.ones_like(v) for k, v in model.params.items()}
        opt = OptimState.for_model(model, OptimConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
        sgd_step(model, grads, opt)
        for name in model.param_names():
            assert np.abs(model.params[name] - (before[name] - 0.1)).max() < 1e-15

    def test_zero_gradient_fixed_point(self):
        model = ClassifierModel.create(ARCH_LINEAR, 2, 2, seed=1)
        before = {k: v.copy() for k, v in model.params.items()}
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        opt = OptimState.for_model(model, OptimConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0))
        sgd_step(model, grads, opt)
        for name in model.param_names():
            assert np.array_equal(model.params[name], before[name])

    def test_two_step_quadratic_recurrence(self):
        # f(theta) = theta^2, grad = 2*theta, lr=0.1, momentum=0.9:
        # hand-iterated oracle for two steps from theta=1
        theta, v = 1.0, 0.0
        for _ in range(2):
            v = 0.9 * v + 2.0 * theta
            theta = theta - 0.1 * v
        model = self.scalar_model(1.0)
        opt = OptimState.for_model(model, OptimConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0))
        for _ in range(2):
            grads = {"W": 2.0 * model.params["W"], "b": np.zeros(2)}
            sgd_step(model, grads, opt)
        assert model.params["W"][0, 0] == pytest.approx(theta, abs=1e-15)
        assert theta == pytest.approx(0.46, abs=1e-12)

    def test_weight_decay_enters_velocity(self):
        model = self.scalar_model(2.0)
        opt = OptimState.for_model(model, OptimConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5))
        sgd_step(model, {"W": np.zeros((2, 1)), "b": np.zeros(2)}, opt)
        # v = 0 + 0 + 0.5*2 = 1; theta = 2 - 0.1*1
        assert model.params["W"][0, 0] == pytest.approx(1.9, abs=1e-15)

    def test_lr_schedule(self):
        cfg = OptimConfig(learning_rate=0.1, lr_decay_factor=10.0, lr_decay_period=5)
        assert cfg.lr_at_epoch(1) == pytest.approx(0.1)
        assert cfg.lr_at_epoch(5) == pytest.approx(0.1)
        assert cfg.lr_at_epoch(6) == pytest.approx(0.01)
        assert cfg.lr_at_epoch(11) == pytest.approx(0.001)

    def test_separable_training_sanity(self):
        rng = np.random.default_rng(8)
        n = 100
        x = np.concatenate([rng.normal(size=(n, 2)) + [4, 0], rng.normal(size=(n, 2)) - [4, 0]])
        y = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
        model = ClassifierModel.create(ARCH_LINEAR, 2, 2, seed=3)
        opt = OptimState.for_model(model, OptimConfig(learning_rate=0.5, momentum=0.0, weight_decay=0.0))
        for _ in range(100):
            grads = backward(model, x, y, None, 0.0)
            sgd_step(model, grads, opt)
        acc = (model.predict(x) == y).mean()
        assert acc >= 0.99


class TestCheckpoint:
    def test_roundtrip_plain(self, tmp_path):
        model = ClassifierModel.create(ARCH_HIDDEN, 4, 3, hidden=6, seed=7)
        path = tmp_path / "m.smpm"
        save_checkpoint(model, str(path))
        back, state = load_checkpoint(str(path))
        assert state is None
        assert back.architecture == ARCH_HIDDEN
        for name in model.param_names():
            assert np.array_equal(back.params[name], model.params[name].astype(np.float32).astype(np.float64))

    def test_roundtrip_with_state_is_exact(self, tmp_path):
        model = ClassifierModel.create(ARCH_HIDDEN, 4, 3, hidden=6, seed=7)
        velocities = {k: np.random.default_rng(1).normal(size=v.shape) for k, v in model.params.items()}
        state = TrainerState(epoch=9, velocities=velocities, master_seed=42, config_digest="a" * 64)
        path = tmp_path / "m.smpm"
        save_checkpoint(model, str(path), state)
        back, got = load_checkpoint(str(path), require_state=True)
        assert got.epoch == 9 and got.master_seed == 42 and got.config_digest == "a" * 64
        for name in model.param_names():
            assert np.array_equal(back.params[name], model.params[name])
            assert np.array_equal(got.velocities[name], velocities[name])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.smpm"
        path.write_bytes(b"XXXX" + b"\x00" * 100)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(str(path))

    def test_truncated(self, tmp_path):
        model = ClassifierModel.create(ARCH_LINEAR, 4, 3, seed=7)
        path = tmp_path / "m.smpm"
        save_checkpoint(model, str(path))
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(str(path))

    def test_require_state_missing(self, tmp_path):
        model = ClassifierModel.create(ARCH_LINEAR, 4, 3, seed=7)
        path = tmp_path / "m.smpm"
        save_checkpoint(model, str(path))
        with pytest.raises(DataError, match="trainer state"):
            load_checkpoint(str(path), require_state=True)


class TestConfigValidation:
    def test_unknown_architecture(self):
        with pytest.raises(ConfigError):
            ClassifierModel("perceptron", 3, 2)

    def test_optimizer_ranges(self):
        with pytest.raises(ConfigError):
            OptimConfig(learning_rate=0.0).validate()
        with pytest.raises(ConfigError):
            OptimConfig(learning_rate=0.1, momentum=1.0).validate()
