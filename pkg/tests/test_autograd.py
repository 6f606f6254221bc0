import numpy as np
import pytest

from awbstyle import tensor as T
from awbstyle.errors import DimensionError, NumericError
from awbstyle.gradcheck import as_check_tensor, grad_check
from awbstyle.optim import AdamState, adam_step
from awbstyle.rng import make_rng


# ---------------------------------------------------------------- backward

class TestBackward:
    def test_sum_gives_ones(self):
        params = T.ParamStore()
        w = params.add("w", T.Tensor(make_rng(1).uniform(size=(3, 4)).astype(np.float32)))
        T.backward(T.tsum(w), params)
        assert np.array_equal(w.grad, np.ones((3, 4), np.float32))

    def test_sum_of_squares(self):
        params = T.ParamStore()
        w = params.add("w", T.Tensor(np.array([3.0], np.float64)))
        T.backward(T.tsum(T.power(w, 2.0)), params)
        assert np.allclose(w.grad, [6.0])

    def test_unreached_param_zero_grad(self):
        params = T.ParamStore()
        used = params.add("used", T.Tensor(np.array([1.0, 2.0], np.float32)))
        idle = params.add("idle", T.Tensor(np.array([5.0], np.float32)))
        T.backward(T.tsum(used), params)
        assert np.array_equal(idle.grad, np.zeros(1, np.float32))

    def test_non_scalar_loss_rejected(self):
        w = T.Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(DimensionError):
            T.backward(w + w)

    def test_cycle_detected(self):
        a = T.Tensor(np.zeros(1), requires_grad=True)
        b = a + a
        # force a cycle by hand; construction through ops cannot produce one
        a._parents = (b,)
        a._backward_fn = lambda g: None
        with pytest.raises(NumericError):
            T.backward(T.tsum(b))

    def test_accumulation_through_reuse(self):
        w = T.Tensor(np.array([2.0], np.float64), requires_grad=True)
        loss = T.tsum(T.mul(w, w) + w)  # d/dw (w^2 + w) = 2w + 1
        T.backward(loss)
        assert np.allclose(w.grad, [5.0])


# ---------------------------------------------------------------- grad checks

def _fd_scalar(fn):
    """Wrap fn so grad_check sees a scalar-valued tensor function."""
    return fn


class TestGradCheck:
    def test_linear_fn_near_exact(self):
        w = as_check_tensor(make_rng(2).standard_normal(5))
        err = grad_check(lambda t: T.tsum(t * 3.0), [w], eps=1e-4)
        assert err <= 1e-10

    def test_conv2d_wrt_all(self):
        rng = make_rng(3)
        x = as_check_tensor(rng.standard_normal((1, 2, 5, 5)))
        w = as_check_tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
        b = as_check_tensor(rng.standard_normal(3) * 0.1)
        err = grad_check(lambda *a: T.tsum(T.power(T.conv2d(a[0], a[1], a[2], stride=2, pad=1), 2.0)), [x, w, b])
        assert err <= 1e-4

    def test_adain_wrt_all_three(self):
        rng = make_rng(4)
        x = as_check_tensor(rng.standard_normal((1, 2, 3, 3)))
        gamma = as_check_tensor(rng.uniform(0.5, 2.0, size=(1, 2)))
        beta = as_check_tensor(rng.standard_normal((1, 2)))
        err = grad_check(lambda *a: T.tsum(T.power(T.adain(a[0], a[1], a[2]), 2.0)), [x, gamma, beta])
        assert err <= 1e-4

    def test_instance_stats(self):
        x = as_check_tensor(make_rng(5).standard_normal((2, 2, 3, 3)))

        def fn(t):
            mu, sigma = T.instance_stats(t)
            return T.tsum(T.power(mu, 2.0)) + T.tsum(T.power(sigma, 2.0))

        assert grad_check(fn, [x]) <= 1e-4

    def test_bilinear_resize(self):
        x = as_check_tensor(make_rng(6).standard_normal((1, 2, 3, 4)))
        err = grad_check(lambda t: T.tsum(T.power(T.bilinear_resize(t, 5, 6), 2.0)), [x])
        assert err <= 1e-4

    def test_linear_layer(self):
        rng = make_rng(7)
        x = as_check_tensor(rng.standard_normal((3, 4)))
        w = as_check_tensor(rng.standard_normal((2, 4)))
        b = as_check_tensor(rng.standard_normal(2))
        err = grad_check(lambda *a: T.tsum(T.power(T.linear(*a), 2.0)), [x, w, b])
        assert err <= 1e-4

    def test_leaky_relu_softplus_concat_narrow(self):
        rng = make_rng(8)
        a = as_check_tensor(rng.standard_normal((1, 2, 3, 3)) + 0.05)
        b = as_check_tensor(rng.standard_normal((1, 3, 3, 3)))

        def fn(ta, tb):
            c = T.concat_channels([T.leaky_relu(ta, 0.2), T.softplus(tb)])
            return T.tsum(T.power(T.narrow(c, 1, 1, 3), 2.0))

        assert grad_check(fn, [a, b]) <= 1e-4

    def test_div_mean_exp_log(self):
        rng = make_rng(9)
        a = as_check_tensor(rng.uniform(0.5, 2.0, size=(2, 3)))
        b = as_check_tensor(rng.uniform(0.5, 2.0, size=(2, 3)))

        def fn(ta, tb):
            return T.tmean(T.div(T.exp(ta), tb)) + T.tsum(T.log(tb))

        assert grad_check(fn, [a, b]) <= 1e-4


# ---------------------------------------------------------------- adam

def adam_reference(w0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar hand-rolled Adam sequence."""
    w, m, v = w0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        out.append(w)
    return out


class TestAdam:
    def test_first_step_magnitude(self):
        params = T.ParamStore()
        w = params.add("w", T.Tensor(np.array([1.0], np.float64)))
        w.grad = np.array([0.5])
        state = AdamState.for_params(params)
        adam_step(params, state, lr=0.1)
        # bias correction makes m_hat = g, v_hat = g^2 -> step ~ lr
        assert abs((1.0 - w.data[0]) - 0.1) <= 1e-7
        assert state.t == 1

    def test_zero_grad_no_move(self):
        params = T.ParamStore()
        w = params.add("w", T.Tensor(np.array([1.5, -2.0], np.float32)))
        w.grad = np.zeros(2, np.float32)
        adam_step(params, AdamState.for_params(params), lr=0.1)
        assert np.array_equal(w.data, np.array([1.5, -2.0], np.float32))

    def test_three_steps_vs_reference(self):
        params = T.ParamStore()
        w = params.add("w", T.Tensor(np.array([1.0], np.float64)))
        state = AdamState.for_params(params)
        seen = []
        grads = []
        for _ in range(3):
            w.grad = None
            T.backward(T.tsum(T.power(w, 2.0)), params)
            grads.append(float(w.grad[0]))
            adam_step(params, state, lr=0.1)
            seen.append(float(w.data[0]))
        ref = adam_reference(1.0, grads, lr=0.1)
        assert np.max(np.abs(np.array(seen) - np.array(ref))) <= 1e-9

    def test_missing_grad_names_parameter(self):
        params = T.ParamStore()
        params.add("enc.w", T.Tensor(np.zeros(2, np.float32)))
        with pytest.raises(NumericError, match="enc.w"):
            adam_step(params, AdamState.for_params(params))

    def test_grads_left_untouched(self):
        params = T.ParamStore()
        w = params.add("w", T.Tensor(np.array([1.0], np.float32)))
        w.grad = np.array([0.25], np.float32)
        adam_step(params, AdamState.for_params(params), lr=0.1)
        assert np.array_equal(w.grad, np.array([0.25], np.float32))


# ---------------------------------------------------------------- determinism

class TestDeterminism:
    def test_rng_identical_streams(self):
        a = make_rng(123).standard_normal(16)
        b = make_rng(123).standard_normal(16)
        assert np.array_equal(a, b)

    def test_rng_keyed_streams_differ(self):
        a = make_rng(123, "init").standard_normal(8)
        b = make_rng(123, "data").standard_normal(8)
        assert not np.array_equal(a, b)

    def test_forward_backward_bit_identical(self):
        def run():
            rng = make_rng(77)
            params = T.ParamStore()
            w = params.add("w", T.Tensor(rng.standard_normal((4, 2, 3, 3)).astype(np.float32)))
            b = params.add("b", T.Tensor(np.zeros(4, np.float32)))
            x = T.Tensor(rng.standard_normal((2, 2, 8, 8)).astype(np.float32))
            loss = T.tsum(T.power(T.conv2d(x, w, b, stride=1, pad=1), 2.0))
            T.backward(loss, params)
            return loss.data.copy(), w.grad.copy()

        l0, g0 = run()
        l1, g1 = run()
        assert np.array_equal(l0, l1)
        assert np.array_equal(g0, g1)

    def test_no_grad_blocks_graph(self):
        w = T.Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = w * 2.0
        assert not y.requires_grad

    def test_anomaly_check_catches_nan(self):
        a = T.Tensor(np.array([1.0]), requires_grad=True)
        b = T.Tensor(np.array([0.0]))
        with T.anomaly_check(), np.errstate(divide="ignore"):
            with pytest.raises(NumericError):
                T.div(a, b)
