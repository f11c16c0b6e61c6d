import numpy as np
import pytest

from posedistill import autodiff as ad
from posedistill.autodiff import AdamState, Tensor
from posedistill.errors import ShapeError

from fdcheck import assert_grads_close, finite_difference


def test_matmul_hand_product():
    out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
    assert out.data.tolist() == [[11.0]]


def test_tanh_at_origin():
    assert ad.tanh(Tensor(0.0)).data == 0.0


def test_mse_identity_is_zero():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert ad.mean_squared_error(x, x.data.copy()).data == 0.0


def test_backward_square():
    p = Tensor(3.0)
    loss = ad.square(p)
    ad.zero_grad([p])
    ad.backward(loss)
    assert p.grad == 6.0


def test_unreachable_parameter_has_zero_grad():
    p = Tensor(3.0)
    q = Tensor(5.0)
    loss = ad.square(p)
    ad.zero_grad([p, q])
    ad.backward(loss)
    assert q.grad == 0.0


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3))
    with pytest.raises(ShapeError):
        ad.backward(x)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg


def test_grad_accumulates_over_reuse():
    p = Tensor(2.0)
    loss = ad.square(p) + p * Tensor(3.0)
    ad.zero_grad([p])
    ad.backward(loss)
    assert p.grad == pytest.approx(2 * 2.0 + 3.0)


def test_bias_broadcast_gradient():
    x = Tensor(np.ones((4, 3)))
    b = Tensor(np.zeros(3))
    loss = ad.sum_(x + b)
    ad.zero_grad([x, b])
    ad.backward(loss)
    assert np.array_equal(b.grad, np.full(3, 4.0))


UNARY_OPS = [
    ("tanh", ad.tanh, (-1.0, 1.0)),
    ("relu", ad.relu, (-1.0, 1.0)),
    ("exp", ad.exp, (-1.0, 1.0)),
    ("log", ad.log, (0.1, 1.1)),
    ("sqrt", ad.sqrt, (0.1, 1.1)),
    ("square", ad.square, (-1.0, 1.0)),
]


@pytest.mark.parametrize("name,op,domain", UNARY_OPS, ids=[u[0] for u in UNARY_OPS])
def test_unary_op_gradients(name, op, domain):
    rng = np.random.default_rng(7)
    lo, hi = domain
    for _ in range(100):
        vals = rng.uniform(lo, hi, size=(2, 3))
        if name == "relu":  # keep probes clear of the kink
            vals = np.where(np.abs(vals) < 1e-3, 0.1, vals)
        x = Tensor(vals.copy())
        loss = ad.sum_(op(x))
        ad.zero_grad([x])
        ad.backward(loss)
        numeric = finite_difference(lambda: float(ad.sum_(op(Tensor(x.data))).data), x.data)
        assert_grads_close(x.grad, numeric)


BINARY_OPS = [
    ("add", ad.add), ("sub", ad.sub), ("mul", ad.mul), ("div", ad.div),
    ("minimum", ad.minimum),
]


@pytest.mark.parametrize("name,op", BINARY_OPS, ids=[b[0] for b in BINARY_OPS])
def test_binary_op_gradients(name, op):
    rng = np.random.default_rng(11)
    for _ in range(100):
        a_vals = rng.uniform(-1.0, 1.0, size=(3, 2))
        b_vals = rng.uniform(-1.0, 1.0, size=(3, 2))
        if name == "div":
            b_vals = np.sign(b_vals) * np.maximum(np.abs(b_vals), 0.2)
        if name == "minimum":  # keep probes clear of ties
            close = np.abs(a_vals - b_vals) < 1e-3
            a_vals = np.where(close, a_vals + 0.1, a_vals)
        a, b = Tensor(a_vals.copy()), Tensor(b_vals.copy())
        loss = ad.sum_(op(a, b))
        ad.zero_grad([a, b])
        ad.backward(loss)
        for t in (a, b):
            numeric = finite_difference(
                lambda: float(ad.sum_(op(Tensor(a.data), Tensor(b.data))).data), t.data
            )
            assert_grads_close(t.grad, numeric)


def test_matmul_and_reduction_gradients():
    rng = np.random.default_rng(13)
    for _ in range(100):
        a = Tensor(rng.uniform(-1, 1, size=(3, 4)))
        b = Tensor(rng.uniform(-1, 1, size=(4, 2)))
        loss = ad.mean(ad.square(a @ b))
        ad.zero_grad([a, b])
        ad.backward(loss)
        for t in (a, b):
            numeric = finite_difference(
                lambda: float(ad.mean(ad.square(Tensor(a.data) @ Tensor(b.data))).data),
                t.data,
            )
            assert_grads_close(t.grad, numeric)


def test_slice_gradient():
    rng = np.random.default_rng(17)
    x = Tensor(rng.uniform(-1, 1, size=(4, 6)))
    loss = ad.sum_(ad.square(x[:, :3])) + ad.sum_(x[:, 3:])
    ad.zero_grad([x])
    ad.backward(loss)

    def value():
        t = Tensor(x.data)
        return float((ad.sum_(ad.square(t[:, :3])) + ad.sum_(t[:, 3:])).data)

    assert_grads_close(x.grad, finite_difference(value, x.data))


def test_axis_reductions():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(ad.sum_(x, axis=1).data, [3.0, 12.0])
    assert np.array_equal(ad.mean(x, axis=0).data, [1.5, 2.5, 3.5])
    loss = ad.sum_(ad.mean(ad.square(x), axis=1))
    ad.zero_grad([x])
    ad.backward(loss)
    assert_grads_close(x.grad, 2.0 * x.data / 3.0)


def test_small_mlp_matches_finite_differences():
    rng = np.random.default_rng(23)
    x = rng.uniform(-1, 1, size=(5, 2))
    target = rng.uniform(-1, 1, size=(5, 1))
    w1 = Tensor(rng.uniform(-1, 1, size=(2, 3)))
    b1 = Tensor(rng.uniform(-1, 1, size=3))
    w2 = Tensor(rng.uniform(-1, 1, size=(3, 1)))
    b2 = Tensor(rng.uniform(-1, 1, size=1))
    params = [w1, b1, w2, b2]

    def loss_tensor():
        h = ad.tanh(Tensor(x) @ w1 + b1)
        return ad.mean_squared_error(h @ w2 + b2, target)

    loss = loss_tensor()
    ad.zero_grad(params)
    ad.backward(loss)
    for p in params:
        numeric = finite_difference(lambda: float(loss_tensor().data), p.data)
        assert_grads_close(p.grad, numeric)


class TestAdam:
    def test_zero_grads_fresh_state_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]))
        state = AdamState.for_params([p])
        p.grad = np.zeros(2)
        ad.adam_step([p], state)
        assert np.array_equal(p.data, [1.0, -2.0])
        assert state.step == 1

    def test_single_step_matches_hand_formula(self):
        p = Tensor(1.0)
        state = AdamState.for_params([p], lr=1e-4)
        p.grad = np.array(1.0)
        ad.adam_step([p], state)
        # first step: m_hat = g, v_hat = g^2, update = lr * g/(|g| + eps)
        expected = 1.0 - 1e-4 * 1.0 / (1.0 + 1e-8)
        assert p.data == pytest.approx(expected, rel=1e-12)

    def test_default_learning_rate(self):
        assert AdamState().lr == 1e-4
        assert AdamState.for_params([Tensor(0.0)]).lr == 1e-4

    def test_step_counter_increases(self):
        p = Tensor(0.0)
        state = AdamState.for_params([p])
        for expected in (1, 2, 3):
            p.grad = np.array(0.5)
            ad.adam_step([p], state)
            assert state.step == expected


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        out = ad.dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
        assert out is x

    def test_eval_mode_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert ad.dropout(x, 0.9, training=False, rng=None) is x

    def test_invalid_rate_rejected(self):
        x = Tensor(np.ones(2))
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                ad.dropout(x, rate, training=True, rng=np.random.default_rng(0))

    def test_survivors_scaled_by_keep_probability(self):
        rng = np.random.default_rng(3)
        x = Tensor(np.full((100, 100), 2.0))
        out = ad.dropout(x, 0.25, training=True, rng=rng)
        vals = np.unique(out.data)
        assert set(np.round(vals, 12)) <= {0.0, np.round(2.0 / 0.75, 12)}
        kept = np.mean(out.data != 0.0)
        assert 0.70 < kept < 0.80

    def test_gradient_through_mask(self):
        rng = np.random.default_rng(5)
        x = Tensor(np.ones((4, 4)))
        out = ad.dropout(x, 0.5, training=True, rng=rng)
        loss = ad.sum_(out)
        ad.zero_grad([x])
        ad.backward(loss)
        assert np.array_equal(x.grad != 0.0, out.data != 0.0)


def test_training_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        w = Tensor(rng.uniform(-1, 1, size=(4, 4)))
        b = Tensor(np.zeros(4))
        state = AdamState.for_params([w, b], lr=1e-3)
        drop_rng = np.random.default_rng(99)
        x = rng.uniform(-1, 1, size=(8, 4))
        for _ in range(20):
            h = ad.dropout(ad.tanh(Tensor(x) @ w + b), 0.25, True, drop_rng)
            loss = ad.mean(ad.square(h))
            ad.zero_grad([w, b])
            ad.backward(loss)
            ad.adam_step([w, b], state)
        return w.data.copy(), b.data.copy()

    w1, b1 = run()
    w2, b2 = run()
    assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
