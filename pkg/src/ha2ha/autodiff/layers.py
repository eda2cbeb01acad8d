"""NCHW layer primitives with hand-written backward passes."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import Tensor, _send, log_branch, make

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NoRunningStatsError(RuntimeError):
    """Batch norm used in inference mode before any training step."""


def _conv3_forward(x: np.ndarray, w: np.ndarray):
    """3x3 'same' cross-correlation in channels-last layout.

    Builds ``xs[b, r, col, j*C + c] = xpad[b, r, col + j, c]`` (three width
    shifts of the zero-padded input) and sums three row-offset matmuls, which
    moves a third of the data of a full 9-tap im2col.
    """
    b, c, h, wd = x.shape
    cout = w.shape[0]
    xs = np.zeros((b, h + 2, wd, 3 * c), dtype=x.dtype)
    xt = x.transpose(0, 2, 3, 1)
    xs[:, 1:-1, 1:, :c] = xt[:, :, :-1]
    xs[:, 1:-1, :, c : 2 * c] = xt
    xs[:, 1:-1, :-1, 2 * c :] = xt[:, :, 1:]
    wr = w.transpose(2, 3, 1, 0).reshape(3, 3 * c, cout)
    out = np.matmul(xs[:, 0:h].reshape(b, h * wd, 3 * c), wr[0])
    for i in (1, 2):
        out += np.matmul(xs[:, i : i + h].reshape(b, h * wd, 3 * c), wr[i])
    return out.reshape(b, h, wd, cout), xs, wr


def _conv3_backward(gt: np.ndarray, xs: np.ndarray, wr: np.ndarray, need_dx: bool):
    """Adjoint of ``_conv3_forward``; ``gt`` is the channels-last output
    gradient. Returns (dw in (Cout, Cin, 3, 3) layout, dx in NCHW or None)."""
    b, h, wd, cout = gt.shape
    c3 = xs.shape[-1]
    c = c3 // 3
    g2 = gt.reshape(b * h * wd, cout)
    dw = np.stack([xs[:, i : i + h].reshape(b * h * wd, c3).T @ g2 for i in range(3)])
    dw = dw.reshape(3, 3, c, cout).transpose(3, 2, 0, 1)
    if not need_dx:
        return dw, None
    gb = gt.reshape(b, h * wd, cout)
    d = np.zeros((b, h + 2, wd, c3), dtype=gt.dtype)
    for i in range(3):
        d[:, i : i + h] += np.matmul(gb, wr[i].T).reshape(b, h, wd, c3)
    dx = d[:, 1:-1, :, c : 2 * c].copy()
    dx[:, :, :-1] += d[:, 1:-1, 1:, :c]
    dx[:, :, 1:] += d[:, 1:-1, :-1, 2 * c :]
    return dw, dx.transpose(0, 3, 1, 2)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Zero-padded 'same' cross-correlation for 3x3 and 1x1 kernels.

    x: (B, Cin, H, W); weight: (Cout, Cin, k, k); bias: (Cout,).
    """
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {wcin}")
    if (kh, kw) not in ((1, 1), (3, 3)):
        raise ValueError(f"conv2d supports 3x3 and 1x1 kernels, got {(kh, kw)}")
    if kh == 1:
        cols = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, cin)
        wmat = weight.data.reshape(cout, cin)
        out = (cols @ wmat.T).reshape(b, h, w, cout)
    else:
        out, xs, wr = _conv3_forward(x.data, weight.data)
    if bias is not None:
        out += bias.data
    out = out.transpose(0, 3, 1, 2)

    def backward(g, grads):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        if bias is not None and bias.requires_grad:
            _send(grads, bias, gt.reshape(-1, cout).sum(axis=0))
        if kh == 1:
            gf = gt.reshape(-1, cout)
            if weight.requires_grad:
                _send(grads, weight, (gf.T @ cols).reshape(weight.shape))
            if x.requires_grad:
                _send(grads, x, (gf @ wmat).reshape(b, h, w, cin).transpose(0, 3, 1, 2))
            return
        dw, dx = _conv3_backward(gt, xs, wr, x.requires_grad)
        if weight.requires_grad:
            _send(grads, weight, dw)
        if dx is not None:
            _send(grads, x, dx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    buffers: dict,
    prefix: str,
    training: bool,
) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    Training mode normalizes with batch statistics (biased variance) and
    updates ``buffers[prefix + 'running_mean' | 'running_var']`` with momentum
    0.1; the running variance uses the unbiased batch estimate. Inference mode
    uses the running statistics.
    """
    c = x.shape[1]
    rm_key, rv_key, n_key = prefix + "running_mean", prefix + "running_var", prefix + "num_batches"
    g_ = gamma.data.reshape(1, c, 1, 1)
    b_ = beta.data.reshape(1, c, 1, 1)
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise ValueError("batch norm training needs batch*height*width >= 2")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc * inv
        m = BN_MOMENTUM
        buffers[rm_key] = (1 - m) * buffers[rm_key] + m * mu.reshape(c)
        buffers[rv_key] = (1 - m) * buffers[rv_key] + m * var.reshape(c) * n / (n - 1)
        buffers[n_key] = buffers[n_key] + 1
    else:
        if buffers[n_key] < 1:
            raise NoRunningStatsError(f"{prefix}: no running statistics yet; train first")
        mu = buffers[rm_key].reshape(1, c, 1, 1).astype(x.dtype)
        inv = (1.0 / np.sqrt(buffers[rv_key] + BN_EPS)).reshape(1, c, 1, 1).astype(x.dtype)
        xhat = (x.data - mu) * inv
    out = xhat * g_ + b_

    def backward(g, grads):
        if gamma.requires_grad:
            _send(grads, gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _send(grads, beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * g_
            if training:
                mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                dx = inv * (dxhat - mean_d - xhat * mean_dx)
            else:
                dx = dxhat * inv
            _send(grads, x, dx)

    return make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data >= 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    log_branch(pos)

    def backward(g, grads):
        _send(grads, x, g * scale)

    return make(x.data * scale, (x,), backward)


def max_pool2(x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling; ties route the gradient to the first element
    in row-major window order."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2 needs even spatial dims, got {(h, w)}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    log_branch(idx)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g, grads):
        dwin = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        _send(grads, x, dx)

    return make(out, (x,), backward)


def _up_axis(a: np.ndarray, axis: int) -> np.ndarray:
    """2x linear upsampling along one axis, half-pixel (align_corners=False)
    centres, edge-clamped: out[2i] = .75 a[i] + .25 a[i-1],
    out[2i+1] = .75 a[i] + .25 a[i+1]."""
    a = np.moveaxis(a, axis, -1)
    prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * prev
    out[..., 1::2] = 0.75 * a + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _up_axis_T(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of ``_up_axis``."""
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    d = 0.75 * (ge + go)
    # .25*prev term: out[2i] reads a[i-1] (a[0] at i=0)
    d[..., :-1] += 0.25 * ge[..., 1:]
    d[..., 0] += 0.25 * ge[..., 0]
    # .25*next term: out[2i+1] reads a[i+1] (a[-1] at the end)
    d[..., 1:] += 0.25 * go[..., :-1]
    d[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(d, -1, axis)


def bilinear_up2(x: Tensor) -> Tensor:
    """2x bilinear upsampling (align_corners=False), separable in H and W."""
    out = _up_axis(_up_axis(x.data, 2), 3)

    def backward(g, grads):
        _send(grads, x, _up_axis_T(_up_axis_T(g, 3), 2))

    return make(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels shape mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def backward(g, grads):
        _send(grads, a, g[:, :ca])
        _send(grads, b, g[:, ca:])

    return make(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def take_batch(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of the batch axis."""

    def backward(g, grads):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[start:stop] = g
        _send(grads, x, full)

    return make(x.data[start:stop], (x,), backward)
