import numpy as np
import pytest

from hypothesis import given, settings
from hypothesis import strategies as st

from wavediff.numerics import buffers, finite_difference_check, ops
from wavediff.numerics.kernels import _ref
from wavediff.numerics.tensor import ParamStore, Tensor, backward, grad, no_grad


def conv1d_direct(x, w, dilation):
    """Brute-force oracle: centered dilated conv with zero padding, [B, L, Ci]."""
    B, L, Ci = x.shape
    Co, _, k = w.shape
    out = np.zeros((B, L, Co))
    center = k // 2
    for b in range(B):
        for l in range(L):
            for co in range(Co):
                acc = 0.0
                for j in range(k):
                    src = l + (j - center) * dilation
                    if 0 <= src < L:
                        acc += np.dot(x[b, src], w[co, :, j])
                out[b, l, co] = acc
    return out


def numeric_grad(loss_fn, store, h=1e-6):
    out = {}
    with no_grad():
        for name, t in store.items():
            flat = t.data.reshape(-1)
            g = np.empty_like(flat)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                plus = float(loss_fn().data)
                flat[i] = saved - h
                minus = float(loss_fn().data)
                flat[i] = saved
                g[i] = (plus - minus) / (2 * h)
            out[name] = g.reshape(t.data.shape)
    return out


def check_op_gradient(build_loss, store, tol=1e-6):
    store.zero_grad()
    backward(build_loss())
    numeric = numeric_grad(build_loss, store)
    for name, t in store.items():
        np.testing.assert_allclose(t.grad, numeric[name], rtol=tol, atol=tol)


class TestConv1d:
    @pytest.mark.parametrize("dilation", [1, 2, 4])
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_direct_convolution(self, k, dilation, rng):
        x = rng.standard_normal((2, 12, 3))
        w = rng.standard_normal((4, 3, k))
        out = ops.conv1d(Tensor(x), Tensor(w), dilation=dilation)
        np.testing.assert_allclose(out.data, conv1d_direct(x, w, dilation), atol=1e-12)

    def test_channels_first_examples(self):
        ones = Tensor(np.ones((1, 1, 5)))
        kernel = Tensor(np.ones((1, 1, 3)))
        np.testing.assert_array_equal(
            ops.conv1d_bidilated(ones, kernel, 1).data[0, 0], [2, 3, 3, 3, 2]
        )
        np.testing.assert_array_equal(
            ops.conv1d_bidilated(ones, kernel, 2).data[0, 0], [2, 2, 3, 2, 2]
        )

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 9, 1))
        ident = np.array([[[0.0, 1.0, 0.0]]])
        out = ops.conv1d(Tensor(x), Tensor(ident), dilation=4)
        np.testing.assert_allclose(out.data, x)

    def test_linearity(self, rng):
        a, b = rng.standard_normal((2, 2, 10, 3))
        w = Tensor(rng.standard_normal((2, 3, 3)))
        lhs = ops.conv1d(Tensor(a + b), w, dilation=2).data
        rhs = ops.conv1d(Tensor(a), w, dilation=2).data + ops.conv1d(Tensor(b), w, dilation=2).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @pytest.mark.parametrize("k,dilation", [(3, 1), (3, 3), (1, 1), (5, 2)])
    def test_gradients(self, k, dilation, rng):
        store = ParamStore()
        w = store.add("w", rng.standard_normal((2, 3, k)))
        b = store.add("b", rng.standard_normal(2))
        xw = store.add("x", rng.standard_normal((1, 8, 3)))
        target = rng.standard_normal((1, 8, 2))

        def loss():
            return ops.squared_error_loss(ops.conv1d(xw, w, b, dilation=dilation), target)

        check_op_gradient(loss, store)

    def test_shape_validation(self, rng):
        with pytest.raises(ValueError):
            ops.conv1d(Tensor(rng.standard_normal((1, 8, 3))), Tensor(rng.standard_normal((2, 4, 3))))
        with pytest.raises(ValueError):
            ops.conv1d(Tensor(rng.standard_normal((1, 8, 3))), Tensor(rng.standard_normal((2, 3, 2))))


class TestKernelBackends:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("k,dilation", [(3, 1), (3, 5), (5, 2), (7, 3)])
    def test_compiled_and_python_agree(self, k, dilation, dtype, rng):
        from wavediff.numerics import kernels

        x = rng.standard_normal((2, 20, 4)).astype(dtype)
        via_backend = kernels.im2col_1d(x, k, dilation)
        ref = np.empty_like(via_backend)
        _ref.im2col_1d(x, ref, k, dilation)
        np.testing.assert_array_equal(via_backend, ref)


class TestConvTranspose2d:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 5, 7))
        out = ops.conv_transpose2d(Tensor(x), Tensor(np.ones((1, 1))), (1, 1), (0, 0))
        np.testing.assert_allclose(out.data, x)

    def test_time_upsampling_extent(self, rng):
        x = Tensor(rng.standard_normal((2, 80, 4)))
        w = Tensor(rng.standard_normal((3, 32)))
        once = ops.conv_transpose2d(x, w, (1, 16), (1, 8))
        assert once.data.shape == (2, 80, 64)
        twice = ops.conv_transpose2d(once, w, (1, 16), (1, 8))
        assert twice.data.shape == (2, 80, 1024)  # 256x total

    def test_brute_force_small_case(self, rng):
        x = rng.standard_normal((1, 2, 3))
        w = rng.standard_normal((2, 4))
        sf, st, pf, pt = 1, 2, 0, 1
        out = ops.conv_transpose2d(Tensor(x), Tensor(w), (sf, st), (pf, pt)).data
        Fe, Te = (2 - 1) * sf + 2, (3 - 1) * st + 4
        expected_ext = np.zeros((1, Fe, Te))
        for f in range(2):
            for n in range(3):
                for i in range(2):
                    for j in range(4):
                        expected_ext[0, f * sf + i, n * st + j] += x[0, f, n] * w[i, j]
        np.testing.assert_allclose(out, expected_ext[:, pf : Fe - pf, pt : Te - pt], atol=1e-12)

    def test_gradients(self, rng):
        store = ParamStore()
        x = store.add("x", rng.standard_normal((1, 3, 4)))
        w = store.add("w", rng.standard_normal((3, 6)))
        target = None

        def loss():
            out = ops.conv_transpose2d(x, w, (1, 2), (1, 2))
            nonlocal target
            if target is None:
                target = np.zeros(out.data.shape)
            return ops.squared_error_loss(out, target)

        check_op_gradient(loss, store)


class TestElementwiseAndReductions:
    def test_gated_tanh_scalar_values(self):
        assert ops.gated_tanh(Tensor(np.array([[0.0, 0.0]]))).data[0, 0] == 0.0
        big = ops.gated_tanh(Tensor(np.array([[30.0, 30.0]]))).data[0, 0]
        assert big == pytest.approx(1.0, abs=1e-9)
        half = ops.gated_tanh(Tensor(np.array([[1.0, 0.0]]))).data[0, 0]
        assert half == pytest.approx(np.tanh(1.0) * 0.5)

    @given(values=st.lists(st.floats(-50, 50), min_size=2, max_size=8).filter(lambda v: len(v) % 2 == 0))
    @settings(max_examples=50, deadline=None)
    def test_gated_tanh_bounded(self, values):
        out = ops.gated_tanh(Tensor(np.array([values]))).data
        # open interval in exact arithmetic; tanh saturates to +/-1.0 in
        # float64 once |a| exceeds ~19, so the closed bound is what floats give
        assert np.all(np.abs(out) <= 1.0)
        if np.all(np.abs(values) < 15.0):
            assert np.all(np.abs(out) < 1.0)

    def test_gated_tanh_odd_channels(self):
        with pytest.raises(ValueError):
            ops.gated_tanh(Tensor(np.ones((1, 3))))

    @pytest.mark.parametrize(
        "op",
        [
            lambda x: ops.relu(x),
            lambda x: ops.leaky_relu(x, 0.4),
            lambda x: ops.sigmoid(x),
            lambda x: ops.tanh(x),
            lambda x: ops.silu(x),
            lambda x: ops.gated_tanh(x),
            lambda x: ops.softmax(x),
            lambda x: ops.scale(x, -1.7),
            lambda x: ops.transpose_12(ops.reshape(x, (2, 2, 2))),
            lambda x: ops.trim(ops.reshape(x, (2, 2, 2)), 1, axis=1),
        ],
    )
    def test_unary_gradients(self, op, rng):
        store = ParamStore()
        # keep clear of the relu kink at 0
        x = store.add("x", rng.standard_normal((2, 4)) + 0.3)
        target = None

        def loss():
            out = op(x)
            nonlocal target
            if target is None:
                target = np.linspace(-1, 1, out.data.size).reshape(out.data.shape)
            return ops.squared_error_loss(out, target)

        check_op_gradient(loss, store)

    def test_leaky_relu_slope(self):
        out = ops.leaky_relu(Tensor(np.array([-2.0, 3.0])), 0.4)
        np.testing.assert_allclose(out.data, [-0.8, 3.0])

    def test_broadcast_add_gradients(self, rng):
        store = ParamStore()
        x = store.add("x", rng.standard_normal((2, 3, 4)))
        v = store.add("v", rng.standard_normal(3))
        target = rng.standard_normal((2, 3, 4))

        def loss():
            return ops.squared_error_loss(ops.broadcast_length_add(x, v), target)

        check_op_gradient(loss, store)

    def test_affine_and_softmax_cross_entropy_gradients(self, rng):
        store = ParamStore()
        w = store.add("w", rng.standard_normal((3, 5)))
        b = store.add("b", rng.standard_normal(3))
        x = rng.standard_normal((4, 5))
        labels = np.array([0, 2, 1, 2])

        def loss():
            return ops.cross_entropy(ops.affine(Tensor(x), w, b), labels)

        check_op_gradient(loss, store)

    def test_embedding_gradient(self, rng):
        store = ParamStore()
        table = store.add("table", rng.standard_normal((5, 3)))
        idx = np.array([1, 1, 4])
        target = rng.standard_normal((3, 3))

        def loss():
            return ops.squared_error_loss(ops.embedding(table, idx), target)

        check_op_gradient(loss, store)

    def test_sum_and_mean(self, rng):
        x = rng.standard_normal((3, 4))
        assert ops.tsum(Tensor(x)).data == pytest.approx(x.sum())
        np.testing.assert_allclose(ops.mean(Tensor(x), axis=0).data, x.mean(0))


class TestAutogradEngine:
    def test_quadratic_gradient(self):
        store = ParamStore()
        p = store.add("p", np.array([1.0, -2.0, 3.0]))
        loss = ops.tsum(ops.mul(p, p))
        backward(loss)
        np.testing.assert_allclose(p.grad, 2 * p.data)

    def test_gradients_accumulate_across_calls(self):
        store = ParamStore()
        p = store.add("p", np.array([1.0, -2.0]))
        backward(ops.tsum(ops.mul(p, p)))
        first = p.grad.copy()
        backward(ops.tsum(ops.mul(p, p)))
        np.testing.assert_allclose(p.grad, 2 * first)
        store.zero_grad()
        np.testing.assert_array_equal(p.grad, np.zeros(2))

    def test_diamond_graph(self):
        store = ParamStore()
        p = store.add("p", np.array([2.0]))
        y = ops.mul(p, p)
        loss = ops.tsum(ops.add(y, y))
        backward(loss)
        np.testing.assert_allclose(p.grad, [8.0])  # d/dp of 2 p^2

    def test_deterministic_accumulation(self, rng):
        def run():
            store = ParamStore()
            p = store.add("p", np.linspace(-1, 1, 12).reshape(3, 4))
            h = ops.tanh(ops.mul(p, p))
            loss = ops.tsum(ops.add(ops.relu(h), ops.scale(h, 0.5)))
            backward(loss)
            return p.grad.copy()

        np.testing.assert_array_equal(run(), run())

    def test_non_scalar_loss_rejected(self):
        store = ParamStore()
        p = store.add("p", np.ones(3))
        with pytest.raises(ValueError):
            backward(ops.mul(p, p))

    def test_no_grad_blocks_graph(self):
        store = ParamStore()
        p = store.add("p", np.ones(3))
        with no_grad():
            loss = ops.tsum(ops.mul(p, p))
        assert loss._backward is None
        backward(loss)  # harmless no-op
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_grad_helper_returns_store_view(self):
        store = ParamStore()
        p = store.add("p", np.array([3.0]))
        grads = grad(ops.tsum(ops.mul(p, p)), store)
        np.testing.assert_allclose(grads["p"], [6.0])

    def test_duplicate_and_unknown_names(self):
        store = ParamStore()
        store.add("p", np.ones(2))
        with pytest.raises(ValueError):
            store.add("p", np.ones(2))
        with pytest.raises(KeyError):
            store.load_arrays({"q": np.ones(2)})
        with pytest.raises(ValueError):
            store.load_arrays({"p": np.ones(3)})


class TestFiniteDifferenceCheck:
    def test_quadratic_is_exact(self):
        store = ParamStore()
        p = store.add("p", np.array([0.5, -1.5, 2.0]))

        def loss():
            return ops.tsum(ops.mul(p, p))

        report = finite_difference_check(loss, store, h=1e-5)
        assert report["p"] < 1e-8

    def test_large_h_degrades(self):
        store = ParamStore()
        p = store.add("p", np.array([0.4, -0.8]))

        def loss():
            return ops.tsum(ops.mul(ops.tanh(p), ops.mul(p, p)))

        fine = finite_difference_check(loss, store, h=1e-5)["p"]
        coarse = finite_difference_check(loss, store, h=0.1)["p"]
        assert coarse > fine * 10


class TestBufferPool:
    def test_escaped_view_is_not_recycled(self):
        buffers.clear()
        shape = (1 << 16,)  # big enough to be pooled
        first = buffers.take(shape, np.float32)
        first[:] = 7.0
        keeper = first[:16]  # sub-view outliving the handle
        del first
        second = buffers.take(shape, np.float32)
        second[:] = -1.0
        np.testing.assert_array_equal(keeper, np.full(16, 7.0, np.float32))

    def test_clean_release_recycles(self):
        buffers.clear()
        shape = (1 << 16,)
        first = buffers.take(shape, np.float32)
        ptr = first.__array_interface__["data"][0]
        del first
        second = buffers.take(shape, np.float32)
        assert second.__array_interface__["data"][0] == ptr
