import numpy as np
import pytest

from supt.tensor import (BatchNormState, batchnorm_backward,
                         batchnorm_forward, linear_backward, linear_forward,
                         relu, relu_backward, sgd_momentum_step, softmax,
                         softmax_cross_entropy, tensor2)

from conftest import numeric_grad, rel_err


def test_tensor2_rejects_nonfinite_and_bad_length():
    with pytest.raises(ValueError):
        tensor2([[1.0, np.nan]])
    with pytest.raises(ValueError):
        tensor2([[1.0, np.inf]])
    with pytest.raises(ValueError):
        tensor2([1.0, 2.0, 3.0], rows=2, cols=2)
    t = tensor2([1.0, 2.0, 3.0, 4.0], rows=2, cols=2)
    assert t.shape == (2, 2)


class TestLinear:
    def test_identity(self):
        y = linear_forward(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
        assert np.array_equal(y, [[1.0, 2.0]])

    def test_sums(self):
        y = linear_forward(np.array([[1.0, 1.0]]), np.ones((2, 1)),
                           np.array([1.0]))
        assert np.array_equal(y, [[3.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            linear_forward(np.zeros((3, 4)), np.zeros((5, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            linear_forward(np.zeros((3, 4)), np.zeros((4, 2)), np.zeros(3))

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        want = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                s = b[j]
                for k in range(4):
                    s += x[i, k] * w[k, j]
                want[i, j] = s
        assert rel_err(linear_forward(x, w, b), want) < 1e-12

    def test_backward_zero_upstream(self):
        x = np.ones((2, 3))
        w = np.ones((3, 2))
        dx, dw, db = linear_backward(x, w, np.zeros((2, 2)))
        assert not dx.any() and not dw.any() and not db.any()

    def test_backward_hand_case(self):
        x = np.array([[1.0, 2.0]])
        w = np.ones((2, 1))
        dx, dw, db = linear_backward(x, w, np.array([[1.0]]))
        assert np.array_equal(dw, [[1.0], [2.0]])
        assert np.array_equal(db, [1.0])
        assert np.array_equal(dx, [[1.0, 1.0]])

    def test_backward_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        r = rng.standard_normal((3, 2))  # loss = sum(y * r)

        def loss():
            return float((linear_forward(x, w, b) * r).sum())

        dx, dw, db = linear_backward(x, w, r)
        assert rel_err(dx, numeric_grad(loss, x)) < 1e-5
        assert rel_err(dw, numeric_grad(loss, w)) < 1e-5
        assert rel_err(db, numeric_grad(loss, b)) < 1e-5


class TestRelu:
    def test_forward(self):
        assert np.array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_subgradient_at_zero(self):
        dx = relu_backward(np.array([-1.0, 0.0, 2.0]), np.ones(3))
        assert np.array_equal(dx, [0.0, 0.0, 1.0])

    def test_finite_differences_away_from_zero(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(20)
        x[np.abs(x) < 0.1] += 0.2  # keep clear of the kink
        r = rng.standard_normal(20)

        def loss():
            return float((relu(x) * r).sum())

        assert rel_err(relu_backward(x, r), numeric_grad(loss, x)) < 1e-5


class TestBatchNorm:
    def test_constant_column_maps_to_zero(self):
        state = BatchNormState.identity(2)
        x = np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]])
        y, _ = batchnorm_forward(x, state, train=True)
        assert np.abs(y[:, 0]).max() < 1e-9

    def test_eval_identity(self):
        state = BatchNormState.identity(3)
        x = np.random.default_rng(3).standard_normal((4, 3))
        y, cache = batchnorm_forward(x, state, train=False)
        assert cache is None
        assert rel_err(y, x) < 1e-4  # epsilon-induced slack

    def test_train_needs_batch(self):
        with pytest.raises(ValueError):
            batchnorm_forward(np.ones((1, 2)), BatchNormState.identity(2),
                              train=True)

    def test_train_normalizes(self):
        state = BatchNormState.identity(3)
        x = np.random.default_rng(4).standard_normal((64, 3)) * 5 + 2
        y, _ = batchnorm_forward(x, state, train=True)
        assert np.abs(y.mean(axis=0)).max() < 1e-10
        assert np.abs(y.var(axis=0) - 1.0).max() < 1e-4

    def test_running_stats_update(self):
        state = BatchNormState.identity(1, momentum=0.1)
        x = np.array([[0.0], [2.0]])  # mean 1, unbiased var 2
        batchnorm_forward(x, state, train=True)
        assert np.isclose(state.running_mean[0], 0.1 * 1.0)
        assert np.isclose(state.running_var[0], 0.9 * 1.0 + 0.1 * 2.0)

    def test_backward_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 3))
        gamma = rng.standard_normal(3) + 1.5
        beta = rng.standard_normal(3)
        r = rng.standard_normal((8, 3))

        def loss():
            state = BatchNormState(gamma.copy(), beta.copy(), np.zeros(3),
                                   np.ones(3))
            y, _ = batchnorm_forward(x, state, train=True)
            return float((y * r).sum())

        state = BatchNormState(gamma.copy(), beta.copy(), np.zeros(3),
                               np.ones(3))
        _, cache = batchnorm_forward(x, state, train=True)
        dx, dgamma, dbeta = batchnorm_backward(cache, r)
        assert rel_err(dx, numeric_grad(loss, x)) < 1e-4
        assert rel_err(dgamma, numeric_grad(loss, gamma)) < 1e-4
        assert rel_err(dbeta, numeric_grad(loss, beta)) < 1e-4

    def test_state_validation(self):
        with pytest.raises(ValueError):
            BatchNormState(np.ones(2), np.zeros(2), np.zeros(2),
                           -np.ones(2))
        with pytest.raises(ValueError):
            BatchNormState(np.ones(2), np.zeros(3), np.zeros(2), np.ones(2))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
        assert np.isclose(loss, np.log(2.0))

    def test_saturated_is_stable(self):
        loss, d = softmax_cross_entropy(np.array([[100.0, 0.0]]), np.array([0]))
        assert 0.0 <= loss < 1e-10
        assert np.isfinite(d).all()

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(6)
        logits = rng.standard_normal((5, 4))
        labels = rng.integers(0, 4, size=5)
        _, d = softmax_cross_entropy(logits, labels)
        assert np.abs(d.sum(axis=1)).max() < 1e-12

    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((4, 5))
        labels = rng.integers(0, 5, size=4)

        def loss():
            return softmax_cross_entropy(logits, labels)[0]

        _, d = softmax_cross_entropy(logits, labels)
        assert rel_err(d, numeric_grad(loss, logits)) < 1e-5

    def test_softmax_rows_sum_to_one(self):
        p = softmax(np.random.default_rng(8).standard_normal((6, 3)) * 10)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12


class TestSgdMomentum:
    def test_plain_step(self):
        w = np.array([1.0])
        v = np.zeros(1)
        sgd_momentum_step(w, np.array([0.5]), v, lr=0.1, momentum=0.0,
                          weight_decay=0.0)
        assert np.isclose(w[0], 0.95)

    def test_two_steps_with_momentum(self):
        w = np.array([0.0])
        v = np.zeros(1)
        g = np.array([1.0])
        sgd_momentum_step(w, g, v, lr=1.0, momentum=0.9, weight_decay=0.0)
        sgd_momentum_step(w, g, v, lr=1.0, momentum=0.9, weight_decay=0.0)
        assert np.isclose(w[0], -2.9)

    def test_masked_entry_stays_zero(self):
        w = np.array([[1.0, 0.0]])
        v = np.zeros((1, 2))
        mask = np.array([[True, False]])
        sgd_momentum_step(w, np.array([[0.3, 5.0]]), v, lr=0.1, momentum=0.9,
                          weight_decay=1e-2, mask=mask)
        assert w[0, 1] == 0.0
        assert v[0, 1] == 0.0
        assert w[0, 0] != 1.0

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(ValueError):
            sgd_momentum_step(np.ones(2), np.array([1.0, np.nan]), np.zeros(2),
                              lr=0.1, momentum=0.9, weight_decay=0.0)


def test_ops_are_deterministic():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    assert np.array_equal(linear_forward(x, w, b), linear_forward(x, w, b))
    labels = rng.integers(0, 3, size=5)
    l1, d1 = softmax_cross_entropy(x @ w, labels)
    l2, d2 = softmax_cross_entropy(x @ w, labels)
    assert l1 == l2 and np.array_equal(d1, d2)
