"""Numpy implementations of the network kernels.

Tensors are plain numpy arrays in (batch, channel, row, col) order,
float32 storage, C-contiguous.  Reductions (convolution sums, batch-norm
statistics, softmax denominators) accumulate in float64 and round back to
float32, which keeps finite-difference checks tight.

Convolution is cross-correlation (no kernel flip); "same" padding is
symmetric zero padding of (k - 1) // 2 per side, so stride s yields
ceil(dim / s) output cells.
"""

import numpy as np

from ..errors import ShapeError

# Cap on the float64 im2col strip buffer, in elements (~64 MB).
_STRIP_BUDGET = 8_000_000


def conv_output_hw(h, w, kh, kw, stride, pad_h, pad_w):
    out_h = (h + 2 * pad_h - kh) // stride + 1
    out_w = (w + 2 * pad_w - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"kernel ({kh}x{kw}, padding {pad_h}x{pad_w}) does not fit "
            f"input of spatial size {h}x{w}"
        )
    return out_h, out_w


def _padded_windows(x, kh, kw, stride, pad_h, pad_w, out_h, out_w):
    """Zero-pad once and expose sliding windows as a strided view.

    Returns (padded, windows) where windows has shape
    (n, c, out_h, out_w, kh, kw) without copying.
    """
    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    sn, sc, sy, sx = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(x.shape[0], x.shape[1], out_h, out_w, kh, kw),
        strides=(sn, sc, sy * stride, sx * stride, sy, sx),
        writeable=False)
    return xp, windows


def _strip_rows(n, out_w, k_cols, out_h):
    per_row = max(1, n * out_w * k_cols)
    rows = max(1, _STRIP_BUDGET // per_row)
    return min(rows, out_h)


def conv2d_forward(x, weights, bias, stride, pad_h, pad_w):
    n, c, h, w = x.shape
    o, ci, kh, kw = weights.shape
    out_h, out_w = conv_output_hw(h, w, kh, kw, stride, pad_h, pad_w)
    _, windows = _padded_windows(x, kh, kw, stride, pad_h, pad_w, out_h, out_w)
    w_mat = weights.reshape(o, -1).T.astype(np.float64)
    out = np.empty((n, o, out_h, out_w), dtype=np.float32)
    strip = _strip_rows(n, out_w, c * kh * kw, out_h)
    for row0 in range(0, out_h, strip):
        row1 = min(row0 + strip, out_h)
        cols = windows[:, :, row0:row1].transpose(0, 2, 3, 1, 4, 5).reshape(
            n * (row1 - row0) * out_w, -1).astype(np.float64)
        prod = cols @ w_mat  # (n * rows * out_w, o)
        prod = prod.reshape(n, row1 - row0, out_w, o).transpose(0, 3, 1, 2)
        out[:, :, row0:row1, :] = prod.astype(np.float32)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_backward(x, weights, stride, pad_h, pad_w, grad_out, with_bias):
    n, c, h, w = x.shape
    o, ci, kh, kw = weights.shape
    out_h, out_w = grad_out.shape[2], grad_out.shape[3]

    grad_bias = None
    if with_bias:
        grad_bias = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)

    # Weight gradient: accumulate strip-wise GEMMs in float64.
    _, windows = _padded_windows(x, kh, kw, stride, pad_h, pad_w, out_h, out_w)
    gw = np.zeros((o, c * kh * kw), dtype=np.float64)
    strip = _strip_rows(n, out_w, c * kh * kw, out_h)
    for row0 in range(0, out_h, strip):
        row1 = min(row0 + strip, out_h)
        cols = windows[:, :, row0:row1].transpose(0, 2, 3, 1, 4, 5).reshape(
            n * (row1 - row0) * out_w, -1).astype(np.float64)
        go = grad_out[:, :, row0:row1, :].transpose(0, 2, 3, 1)
        go = go.reshape(-1, o).astype(np.float64)
        gw += go.T @ cols
    grad_weights = gw.reshape(o, c, kh, kw).astype(np.float32)

    # Input gradient: one GEMM per kernel tap, scattered onto a padded
    # buffer through strided views (targets within one tap are disjoint).
    gx_pad = np.zeros((n, c, h + 2 * pad_h, w + 2 * pad_w), dtype=np.float64)
    go64 = grad_out.astype(np.float64)
    for ky in range(kh):
        for kx in range(kw):
            contrib = np.tensordot(go64, weights[:, :, ky, kx].astype(np.float64),
                                   axes=([1], [0]))  # (n, out_h, out_w, c)
            view = gx_pad[:, :,
                          ky:ky + stride * out_h:stride,
                          kx:kx + stride * out_w:stride]
            view += contrib.transpose(0, 3, 1, 2)
    grad_input = gx_pad[:, :, pad_h:pad_h + h, pad_w:pad_w + w].astype(np.float32)
    return grad_input, grad_weights, grad_bias


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :, :h2 * 2, :w2 * 2].reshape(n, c, h2, 2, w2, 2)
    # Candidates in flat-index order within each window: (0,0),(0,1),(1,0),(1,1).
    cand = np.stack(
        [v[:, :, :, 0, :, 0], v[:, :, :, 0, :, 1],
         v[:, :, :, 1, :, 0], v[:, :, :, 1, :, 1]], axis=-1)
    pick = cand.argmax(axis=-1)  # first max wins -> lowest flat index
    out = np.take_along_axis(cand, pick[..., None], axis=-1)[..., 0]
    dy, dx = pick >> 1, pick & 1
    oy = np.arange(h2)[None, None, :, None]
    ox = np.arange(w2)[None, None, None, :]
    iy = oy * 2 + dy
    ix = ox * 2 + dx
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    idx = ((nn * c + cc) * h + iy) * w + ix
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool2x2_backward(input_shape, argmax_idx, grad_out):
    grad = np.zeros(int(np.prod(input_shape)), dtype=np.float32)
    grad[argmax_idx.ravel()] = grad_out.ravel()  # window targets are unique
    return grad.reshape(input_shape)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return np.where(x > 0.0, grad_out, np.float32(0.0))


def batchnorm_forward(x, scale, shift, running_mean, running_var, eps, momentum,
                      mode):
    if mode == "train":
        mu = x.mean(axis=(0, 2, 3), dtype=np.float64)
        var = np.square(x.astype(np.float64) - mu[None, :, None, None]).mean(
            axis=(0, 2, 3))
        running_mean[:] = ((1.0 - momentum) * running_mean + momentum * mu
                           ).astype(np.float32)
        running_var[:] = ((1.0 - momentum) * running_var + momentum * var
                          ).astype(np.float32)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    mu32 = mu.astype(np.float32)[None, :, None, None]
    k32 = (inv_std * scale.astype(np.float64)).astype(np.float32)[None, :, None, None]
    out = (x - mu32) * k32 + shift[None, :, None, None]
    return out, mu.astype(np.float32), inv_std.astype(np.float32)


def batchnorm_backward(x, scale, mu, inv_std, grad_out):
    m = x.shape[0] * x.shape[2] * x.shape[3]
    xhat = ((x.astype(np.float64) - mu.astype(np.float64)[None, :, None, None])
            * inv_std.astype(np.float64)[None, :, None, None])
    go = grad_out.astype(np.float64)
    grad_shift = go.sum(axis=(0, 2, 3))
    grad_scale = (go * xhat).sum(axis=(0, 2, 3))
    gxhat = go * scale.astype(np.float64)[None, :, None, None]
    gx = (gxhat
          - gxhat.mean(axis=(0, 2, 3))[None, :, None, None]
          - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None] / m)
    gx *= inv_std.astype(np.float64)[None, :, None, None]
    return (gx.astype(np.float32), grad_scale.astype(np.float32),
            grad_shift.astype(np.float32))


def upsample_rows_cols(src_h, src_w, target_h, target_w):
    ys = (np.arange(target_h) * src_h) // target_h
    xs = (np.arange(target_w) * src_w) // target_w
    return ys, xs


def upsample_nearest_forward(x, target_h, target_w):
    ys, xs = upsample_rows_cols(x.shape[2], x.shape[3], target_h, target_w)
    return np.ascontiguousarray(x[:, :, ys[:, None], xs[None, :]])


def upsample_nearest_backward(src_h, src_w, grad_out):
    target_h, target_w = grad_out.shape[2], grad_out.shape[3]
    # Segment starts: first target index mapping to each source index.
    row_starts = -(-np.arange(src_h) * target_h // src_h)  # ceil(r*th/sh)
    col_starts = -(-np.arange(src_w) * target_w // src_w)
    g = np.add.reduceat(grad_out.astype(np.float64), row_starts, axis=2)
    g = np.add.reduceat(g, col_starts, axis=3)
    return g.astype(np.float32)


def concat_channels(tensors):
    return np.concatenate(tensors, axis=1)


def split_channels(grad_out, channel_counts):
    edges = np.cumsum(channel_counts)[:-1]
    return [np.ascontiguousarray(p) for p in np.split(grad_out, edges, axis=1)]


def softmax_channels(x):
    shifted = (x - x.max(axis=1, keepdims=True)).astype(np.float64)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)
