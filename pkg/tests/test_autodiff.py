import numpy as np
import pytest

from ha2ha.autodiff import (
    NoRunningStatsError,
    ParamStore,
    Tensor,
    abs_sum,
    absolute,
    batch_norm,
    bilinear_up2,
    concat_channels,
    conv2d,
    gradient_check,
    gradient_check_report,
    leaky_relu,
    max_pool2,
    mean,
    mul,
    sub,
    take_batch,
    total,
)


def _t(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def _conv_oracle(x, w, b):
    """Zero-padded 'same' cross-correlation by explicit loops."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.zeros((n, co, h, wd))
    for bb in range(n):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    acc = b[o]
                    for c in range(ci):
                        for di in range(k):
                            for dj in range(k):
                                acc += w[o, c, di, dj] * xp[bb, c, i + di, j + dj]
                    out[bb, o, i, j] = acc
    return out


def _fd_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        up = f()
        flat[i] = o - eps
        down = f()
        flat[i] = o
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 6))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1
    out = conv2d(_t(x), _t(w), _t(np.zeros(3))).data
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_conv_ones_kernel_constant():
    out = conv2d(_t(np.full((1, 1, 5, 5), 2.0)), _t(np.ones((1, 1, 3, 3)))).data
    assert out[0, 0, 2, 2] == 18.0
    assert out[0, 0, 0, 0] == 8.0  # corner sees 4 taps


@pytest.mark.parametrize("k", [1, 3])
def test_conv_matches_loop_oracle(k):
    rng = np.random.default_rng(k)
    x = rng.standard_normal((2, 3, 5, 4))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(conv2d(_t(x), _t(w), _t(b)).data, _conv_oracle(x, w, b), atol=1e-10)


def test_conv_backward_finite_difference():
    rng = np.random.default_rng(2)
    x, w, b = _t(rng.standard_normal((2, 2, 4, 5))), _t(rng.standard_normal((3, 2, 3, 3))), _t(rng.standard_normal(3))
    proj = rng.standard_normal((2, 3, 4, 5))

    def f():
        return float(np.sum(conv2d(x, w, b).data * proj))

    out = conv2d(x, w, b)
    total(mul(out, Tensor(proj))).backward()
    for t in (x, w, b):
        np.testing.assert_allclose(t.grad, _fd_grad(f, t.data), atol=1e-7)


def test_conv_rejects_bad_shapes():
    with pytest.raises(ValueError):
        conv2d(_t(np.zeros((1, 2, 4, 4))), _t(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(_t(np.zeros((1, 1, 4, 4))), _t(np.zeros((1, 1, 5, 5))))


def _bn_params(c, gamma=1.0, beta=0.0):
    buf = {"running_mean": np.zeros(c), "running_var": np.ones(c), "num_batches": np.array(0.0)}
    return _t(np.full(c, gamma)), _t(np.full(c, beta)), buf


def test_batch_norm_train_moments():
    x = np.random.default_rng(3).standard_normal((4, 3, 5, 5)) * 3 + 2
    g, b, buf = _bn_params(3)
    y = batch_norm(_t(x), g, b, buf, "", True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-6 + 1e-3)  # eps shrinks var slightly


def test_batch_norm_affine_and_oracle():
    x = np.random.default_rng(4).standard_normal((2, 2, 3, 3))
    g, b, buf = _bn_params(2, 2.0, 3.0)
    y = batch_norm(_t(x), g, b, buf, "", True).data
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    ref = 2 * (x - mu) / np.sqrt(var + 1e-5) + 3
    np.testing.assert_allclose(y, ref, atol=1e-8)
    n = 18
    np.testing.assert_allclose(buf["running_mean"], 0.1 * mu.ravel())
    np.testing.assert_allclose(buf["running_var"], 0.9 + 0.1 * var.ravel() * n / (n - 1))
    assert buf["num_batches"] == 1


def test_batch_norm_infer_uses_running_stats():
    x = np.random.default_rng(5).standard_normal((1, 2, 3, 3))
    g, b, buf = _bn_params(2)
    with pytest.raises(NoRunningStatsError):
        batch_norm(_t(x), g, b, buf, "", False)
    buf.update(running_mean=np.array([1.0, -1.0]), running_var=np.array([4.0, 9.0]), num_batches=np.array(1.0))
    y = batch_norm(_t(x), g, b, buf, "", False).data
    ref = (x - np.array([1.0, -1.0])[None, :, None, None]) / np.sqrt(np.array([4.0, 9.0]) + 1e-5)[None, :, None, None]
    np.testing.assert_allclose(y, ref, atol=1e-12)
    with pytest.raises(ValueError):
        batch_norm(_t(np.zeros((1, 2, 1, 1))), g, b, buf, "", True)


def test_batch_norm_backward_finite_difference():
    rng = np.random.default_rng(6)
    x = _t(rng.standard_normal((2, 2, 3, 3)))
    g, b, buf = _bn_params(2, 1.5, 0.2)
    proj = rng.standard_normal((2, 2, 3, 3))

    def f():
        return float(np.sum(batch_norm(x, g, b, dict(buf), "", True).data * proj))

    total(mul(batch_norm(x, g, b, dict(buf), "", True), Tensor(proj))).backward()
    for t in (x, g, b):
        np.testing.assert_allclose(t.grad, _fd_grad(f, t.data), atol=1e-6)


def test_leaky_relu():
    x = _t([[[[5.0, -4.0, -2.0]]]])
    y = leaky_relu(x, 0.1)
    np.testing.assert_allclose(y.data, [[[[5.0, -0.4, -0.2]]]])
    total(y).backward()
    np.testing.assert_allclose(x.grad, [[[[1.0, 0.1, 0.1]]]])


def test_max_pool_values_and_ties():
    x = _t(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
    assert max_pool2(x).data.item() == 4.0
    c = _t(np.full((1, 1, 4, 4), 7.0))
    y = max_pool2(c)
    assert np.all(y.data == 7.0)
    total(y).backward()
    expect = np.zeros((4, 4))
    expect[::2, ::2] = 1
    np.testing.assert_array_equal(c.grad[0, 0], expect)
    with pytest.raises(ValueError):
        max_pool2(_t(np.zeros((1, 1, 3, 4))))


def test_max_pool_loop_oracle():
    x = np.random.default_rng(7).standard_normal((2, 3, 6, 4))
    ref = np.zeros((2, 3, 3, 2))
    for i in range(3):
        for j in range(2):
            ref[:, :, i, j] = x[:, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max(axis=(2, 3))
    np.testing.assert_array_equal(max_pool2(_t(x)).data, ref)


def test_bilinear_constant_and_single_pixel():
    assert np.all(bilinear_up2(_t(np.full((1, 2, 3, 3), 4.0))).data == 4.0)
    np.testing.assert_array_equal(bilinear_up2(_t(np.full((1, 1, 1, 1), 2.5))).data, np.full((1, 1, 2, 2), 2.5))


def test_bilinear_hand_weights():
    a, b, c, d = 1.0, 2.0, 3.0, 5.0
    x = np.array([[a, b], [c, d]])[None, None]
    out = bilinear_up2(_t(x)).data[0, 0]
    # interior output (1, 1) sits at input position (0.25, 0.25)
    ref11 = 0.75 * 0.75 * a + 0.75 * 0.25 * b + 0.25 * 0.75 * c + 0.25 * 0.25 * d
    assert np.isclose(out[1, 1], ref11)
    assert np.isclose(out[0, 0], a)  # clamped edge
    assert np.isclose(out[3, 3], d)
    assert np.isclose(out[0, 1], 0.75 * a + 0.25 * b)


def test_bilinear_adjoint():
    rng = np.random.default_rng(8)
    x = _t(rng.standard_normal((1, 2, 3, 5)))
    g = rng.standard_normal((1, 2, 6, 10))
    y = bilinear_up2(x)
    total(mul(y, Tensor(g))).backward()
    assert np.isclose(np.sum(y.data * g), np.sum(x.data * x.grad))


def test_concat_channels():
    a, b = _t(np.ones((1, 4, 8, 8))), _t(np.zeros((1, 4, 8, 8)))
    y = concat_channels(a, b)
    assert y.shape == (1, 8, 8, 8)
    assert np.all(y.data[:, :4] == 1) and np.all(y.data[:, 4:] == 0)
    g = np.random.default_rng(9).standard_normal(y.shape)
    total(mul(y, Tensor(g))).backward()
    np.testing.assert_array_equal(np.concatenate([a.grad, b.grad], axis=1), g)
    with pytest.raises(ValueError):
        concat_channels(a, _t(np.zeros((1, 4, 4, 8))))


def test_take_batch_gradient():
    x = _t(np.arange(8.0).reshape(4, 1, 1, 2))
    total(take_batch(x, 1, 3)).backward()
    np.testing.assert_array_equal(x.grad[:, 0, 0, 0], [0, 1, 1, 0])


def test_elementwise_and_reductions():
    a, b = _t([1.0, -2.0, 3.0]), _t([0.5, 0.5, -1.0])
    y = mean(absolute(sub(mul(a, b), b)))
    assert np.isclose(y.item(), np.mean(np.abs(a.data * b.data - b.data)))
    y.backward()
    assert a.grad is not None and b.grad is not None
    z = _t([-1.0, 2.0])
    abs_sum(z).backward()
    np.testing.assert_array_equal(z.grad, [-1.0, 1.0])


def test_shared_node_accumulates():
    x = _t([2.0])
    y = mul(x, x) + x
    y.backward(np.ones(1))
    np.testing.assert_allclose(x.grad, [5.0])


def _store_conv(seed=0):
    rng = np.random.default_rng(seed)
    p = ParamStore(np.float64)
    p.add("w", rng.standard_normal((2, 1, 3, 3)), regularized=True)
    p.add("b", rng.standard_normal(2), regularized=True)
    return p, rng.standard_normal((2, 1, 5, 5)), rng.standard_normal((2, 2, 5, 5))


def test_gradient_check_linear_conv():
    p, x, target = _store_conv()

    def loss():
        d = sub(conv2d(Tensor(x), p["w"], p["b"]), Tensor(target))
        return mean(mul(d, d))

    assert gradient_check(loss, p, step=1e-4, n_samples=None) <= 1e-6


def test_gradient_check_constant_loss():
    p, _, _ = _store_conv()
    assert gradient_check(lambda: total(mul(p["w"], Tensor(np.zeros((2, 1, 3, 3))))), p) == 0.0


def test_gradient_check_detects_wrong_gradient():
    p, _, _ = _store_conv()

    def loss():
        # sum(w * w) with one factor detached: backward sees w, the true
        # derivative is 2w, so the relative error is 0.5
        return total(mul(Tensor(p["w"].data.copy()), p["w"]))

    assert abs(gradient_check(loss, p, n_samples=None) - 0.5) < 1e-6


def test_gradient_check_limits_and_report():
    p = ParamStore(np.float64)
    p.add("big", np.zeros(10_001))
    with pytest.raises(ValueError):
        gradient_check(lambda: total(p["big"]), p)
    q, x, _ = _store_conv()
    rep = gradient_check_report(lambda: abs_sum(conv2d(Tensor(x), q["w"], q["b"])), q, n_samples=5)
    assert rep.n_checked == 5


def test_param_store_basics():
    p = ParamStore(np.float32)
    p.add("a", np.ones((2, 3)), regularized=True)
    p.add_buffer("a.stat", np.zeros(2))
    assert p.count() == 6 and len(p) == 1
    with pytest.raises(KeyError):
        p.add("a", np.zeros(1))
    with pytest.raises(KeyError):
        p.add_buffer("a", np.zeros(1))
    q = p.copy()
    q["a"].data[...] = 5
    assert np.all(p["a"].data == 1)
    assert q.regularized == {"a"}
    assert p.astype(np.float64)["a"].data.dtype == np.float64
