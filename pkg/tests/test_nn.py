import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcp.nn import (
    AdamState,
    DenseParams,
    LstmParams,
    adam_step,
    dense_backward,
    dense_forward,
    flatten,
    grad_check,
    lstm_backward,
    lstm_forward,
    mae_loss,
    sigmoid,
    unflatten,
)

from oracles import scalar_adam, scalar_lstm


def _random_params(rng, D, H, scale=0.5):
    return LstmParams(
        rng.normal(0, scale, (4, H, D)),
        rng.normal(0, scale, (4, H, H)),
        rng.normal(0, scale, (4, H)),
    )


class TestLstmForward:
    def test_zero_params_give_zero_output(self):
        x = np.ones((5, 3))
        h, _ = lstm_forward(x, LstmParams.zeros(3, 4))
        # i = f = o = 0.5, g = tanh(0) = 0 so c stays 0
        np.testing.assert_array_equal(h, np.zeros((5, 4)))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        p = _random_params(rng, 3, 4)
        x = rng.normal(size=(8, 3))
        h, _ = lstm_forward(x, p)
        ref = scalar_lstm(x.tolist(), p.W.tolist(), p.U.tolist(), p.b.tolist())
        np.testing.assert_allclose(h, ref, rtol=0, atol=1e-12)

    def test_batch_equals_rows(self):
        rng = np.random.default_rng(2)
        p = _random_params(rng, 2, 3)
        x = rng.normal(size=(4, 6, 2))
        hb, _ = lstm_forward(x, p)
        for k in range(4):
            np.testing.assert_allclose(hb[k], lstm_forward(x[k], p)[0], atol=1e-14)

    def test_gate_accessor(self):
        p = LstmParams.zeros(2, 3)
        p.W[1] = 7.0
        assert (p.gate("forget")[0] == 7.0).all()

    def test_input_dim_mismatch(self):
        with pytest.raises(ValueError):
            lstm_forward(np.zeros((3, 5)), LstmParams.zeros(2, 3))

    def test_bad_shapes_rejected(self):
        p = LstmParams(np.zeros((4, 3, 2)), np.zeros((4, 2, 2)), np.zeros((4, 3)))
        with pytest.raises(ValueError):
            lstm_forward(np.zeros((3, 2)), p)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 20.0))
    def test_output_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = _random_params(rng, 3, 4, scale)
        h, _ = lstm_forward(rng.normal(0, scale, (6, 3)), p)
        assert np.isfinite(h).all()
        assert (np.abs(h) <= 1.0).all()


class TestLstmBackward:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_check(self, seed):
        rng = np.random.default_rng(seed)
        H, L, D = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 4)
        p = _random_params(rng, D, H)
        x = rng.normal(size=(L, D))
        r = rng.normal(size=(L, H))

        def objective():
            return float(np.sum(lstm_forward(x, p)[0] * r))

        _, cache = lstm_forward(x, p)
        dx, g = lstm_backward(r, cache)
        checks = grad_check(
            objective,
            {"W": p.W, "U": p.U, "b": p.b, "x": x},
            {"W": g.W, "U": g.U, "b": g.b, "x": dx},
            eps=1e-4,
            tol=1e-4,
            abs_floor=1e-6,
        )
        for name, c in checks.items():
            assert c.passed, (name, c)

    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(0)
        p = _random_params(rng, 2, 3)
        x = rng.normal(size=(5, 2))
        _, cache = lstm_forward(x, p)
        dx, g = lstm_backward(np.zeros((5, 3)), cache)
        for arr in (dx, g.W, g.U, g.b):
            assert not arr.any()

    def test_batched_grads_sum_over_examples(self):
        rng = np.random.default_rng(4)
        p = _random_params(rng, 2, 3)
        x = rng.normal(size=(3, 4, 2))
        r = rng.normal(size=(3, 4, 3))
        _, cache = lstm_forward(x, p)
        dx, g = lstm_backward(r, cache)
        tot = np.zeros_like(p.W)
        for k in range(3):
            _, ck = lstm_forward(x[k], p)
            dxk, gk = lstm_backward(r[k], ck)
            np.testing.assert_allclose(dx[k], dxk, atol=1e-13)
            tot += gk.W
        np.testing.assert_allclose(g.W, tot, atol=1e-12)

    def test_causal(self):
        # a padded tail cannot change earlier outputs, nor gradients flowing from them
        rng = np.random.default_rng(5)
        p = _random_params(rng, 3, 2)
        x = rng.normal(size=(6, 3))
        padded = x.copy()
        padded[4:] = 0.0
        h1, c1 = lstm_forward(x, p)
        h2, _ = lstm_forward(padded, p)
        np.testing.assert_array_equal(h1[:4], h2[:4])
        r = np.zeros((6, 2))
        r[:4] = rng.normal(size=(4, 2))
        dx, _ = lstm_backward(r, c1)
        assert not dx[4:].any()

    def test_shape_mismatch(self):
        _, cache = lstm_forward(np.zeros((3, 2)), LstmParams.zeros(2, 2))
        with pytest.raises(ValueError):
            lstm_backward(np.zeros((2, 2)), cache)


class TestDense:
    def test_forward_example(self):
        p = DenseParams(np.array([1.0, -2.0]), np.array([0.5]))
        assert dense_forward(np.array([3.0, 1.0]), p) == pytest.approx(1.5)

    def test_batch(self):
        p = DenseParams(np.array([1.0, 1.0]), np.array([0.0]))
        np.testing.assert_array_equal(dense_forward(np.array([[1.0, 2.0], [3.0, 4.0]]), p), [3, 7])

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        p = DenseParams(rng.normal(size=5), rng.normal(size=1))
        v = rng.normal(size=(3, 5))
        r = rng.normal(size=3)
        dv, g = dense_backward(r, v, p)
        checks = grad_check(
            lambda: float(dense_forward(v, p) @ r),
            {"W": p.W, "b": p.b, "v": v},
            {"W": g.W, "b": g.b, "v": dv},
        )
        assert all(c.passed for c in checks.values())

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            dense_forward(np.zeros(3), DenseParams.zeros(4))


class TestFlatten:
    def test_row_major(self):
        assert flatten(np.array([[1, 2], [3, 4]])).tolist() == [1, 2, 3, 4]

    def test_batch_and_round_trip(self):
        m = np.arange(24).reshape(2, 3, 4)
        f = flatten(m)
        assert f.shape == (2, 12)
        np.testing.assert_array_equal(unflatten(f, 3), m)


class TestMae:
    def test_example(self):
        loss, grad = mae_loss(np.array([0.0, 4.0]), np.array([1.0, 1.0]))
        assert loss == 2.0
        np.testing.assert_array_equal(grad, [-0.5, 0.5])

    def test_zero_at_equality(self):
        loss, grad = mae_loss(np.array([3.0]), np.array([3.0]))
        assert loss == 0.0 and grad[0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae_loss(np.zeros(2), np.zeros(3))


class TestAdam:
    def test_zero_gradient_is_a_no_op(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_moves_by_lr_against_gradient(self):
        p = {"w": np.array([0.0, 0.0])}
        adam_step(p, {"w": np.array([3.0, -0.01])}, AdamState(), lr=1e-3)
        np.testing.assert_allclose(p["w"], [-1e-3, 1e-3], rtol=1e-5)

    def test_matches_scalar_oracle(self):
        grads = [0.3, -1.2, 0.7, 0.0, 2.5]
        p = {"w": np.array([0.4])}
        state = AdamState()
        got = []
        for g in grads:
            adam_step(p, {"w": np.array([g])}, state, lr=0.01)
            got.append(float(p["w"][0]))
        np.testing.assert_allclose(got, scalar_adam(0.4, grads, lr=0.01), atol=1e-15)
        assert state.t == len(grads)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def test_sigmoid_values():
    np.testing.assert_allclose(sigmoid(np.array([0.0, 2.0, -800.0])), [0.5, 1 / (1 + np.exp(-2.0)), 0.0])


def test_grad_check_flags_wrong_gradient():
    w = np.array([1.0, 2.0])
    checks = grad_check(lambda: float(np.sum(w**2)), {"w": w}, {"w": np.array([2.0, 5.0])})
    assert not checks["w"].passed
    np.testing.assert_array_equal(w, [1.0, 2.0])  # restored after perturbation
