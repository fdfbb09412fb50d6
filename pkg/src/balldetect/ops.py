"""Dense 4-D tensor kernels: forward passes and exact gradients.

A tensor is a C-contiguous float32 numpy array of shape
(batch, channels, rows, cols); element (n, c, y, x) therefore sits at flat
index ((n * C + c) * H + y) * W + x.  All kernels are deterministic and,
apart from the batch-norm running-statistics update, pure functions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError
from .kernels.numpy_backend import conv_output_hw

SAME = "same"


def as_tensor4(x, what="tensor"):
    """Validate/coerce an array to the 4-D float32 tensor convention."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (n, c, h, w), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{what} has an empty dimension: {arr.shape}")
    return arr


@dataclass
class ConvLayerParams:
    """Weights (out_ch, in_ch, kH, kW), optional bias, stride and padding.

    padding is either ``SAME`` (zero padding of (k-1)//2 per side, output
    ceil(dim/stride)) or an explicit (pad_h, pad_w) pair.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: object = SAME

    def __post_init__(self):
        self.weights = as_tensor4(self.weights, "conv weights")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.weights.shape[0],):
                raise ShapeError(
                    f"bias shape {self.bias.shape} does not match "
                    f"{self.weights.shape[0]} output channels")
        kh, kw = self.weights.shape[2], self.weights.shape[3]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    def pad_hw(self):
        if self.padding == SAME:
            return (self.weights.shape[2] - 1) // 2, (self.weights.shape[3] - 1) // 2
        return self.padding

    def output_hw(self, h, w):
        ph, pw = self.pad_hw()
        return conv_output_hw(h, w, self.weights.shape[2], self.weights.shape[3],
                              self.stride, ph, pw)


@dataclass
class BatchNormParams:
    """Per-channel affine batch normalization with running statistics."""

    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, channels, epsilon=1e-5, momentum=0.1):
        return cls(scale=np.ones(channels, dtype=np.float32),
                   shift=np.zeros(channels, dtype=np.float32),
                   running_mean=np.zeros(channels, dtype=np.float32),
                   running_var=np.ones(channels, dtype=np.float32),
                   epsilon=epsilon, momentum=momentum)

    def __post_init__(self):
        vecs = [self.scale, self.shift, self.running_mean, self.running_var]
        n = vecs[0].shape[0]
        if any(v.ndim != 1 or v.shape[0] != n for v in vecs):
            raise ShapeError("batch-norm parameter vectors must share one length")
        if (self.running_var < 0).any():
            raise ShapeError("running variance must be non-negative")

    @property
    def channels(self):
        return self.scale.shape[0]


def conv2d(x, params):
    """Cross-correlate x with the layer kernel and add bias."""
    x = as_tensor4(x, "conv input")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"input channel count {x.shape[1]} does not match kernel input "
            f"channels {params.in_channels} (input {x.shape}, "
            f"kernel {params.weights.shape})")
    ph, pw = params.pad_hw()
    return kernels.op("conv2d_forward")(x, params.weights, params.bias,
                                        params.stride, ph, pw)


def conv2d_backward(x, params, grad_out):
    """Gradients of sum(grad_out * conv2d(x, params)) w.r.t. x, weights, bias.

    grad_bias is None when the layer has no bias.
    """
    x = as_tensor4(x, "conv input")
    grad_out = as_tensor4(grad_out, "conv grad_out")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"input channel count {x.shape[1]} does not match kernel input "
            f"channels {params.in_channels} (input {x.shape}, "
            f"kernel {params.weights.shape})")
    out_h, out_w = params.output_hw(x.shape[2], x.shape[3])
    expect = (x.shape[0], params.out_channels, out_h, out_w)
    if grad_out.shape != expect:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match the "
                         f"conv output shape {expect}")
    ph, pw = params.pad_hw()
    return kernels.op("conv2d_backward")(x, params.weights, params.stride,
                                         ph, pw, grad_out,
                                         params.bias is not None)


def maxpool2x2(x):
    """2x2 max pooling, stride 2; odd trailing row/col dropped.

    Returns (output, argmax) where argmax holds the flat input index of
    each window maximum (ties -> lowest flat index) for the backward pass.
    """
    x = as_tensor4(x, "pool input")
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"pooling needs spatial dims >= 2, got {x.shape}")
    return kernels.op("maxpool2x2_forward")(x)


def maxpool2x2_backward(input_shape, argmax, grad_out):
    grad_out = as_tensor4(grad_out, "pool grad_out")
    return kernels.op("maxpool2x2_backward")(input_shape, argmax, grad_out)


def relu(x):
    return kernels.op("relu_forward")(as_tensor4(x, "relu input"))


def relu_backward(x, grad_out):
    return kernels.op("relu_backward")(x, grad_out)


def batchnorm(x, params, mode):
    """Normalize per channel; train mode also updates running statistics.

    Returns (output, batch_mean, batch_inv_std); the statistics feed
    batchnorm_backward.  Infer mode returns running statistics instead.
    """
    x = as_tensor4(x, "batchnorm input")
    if x.shape[1] != params.channels:
        raise ShapeError(f"input channels {x.shape[1]} do not match "
                         f"batch-norm channels {params.channels}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return kernels.op("batchnorm_forward")(
        x, params.scale, params.shift, params.running_mean, params.running_var,
        params.epsilon, params.momentum, mode)


def batchnorm_backward(x, params, mean, inv_std, grad_out):
    """Gradients w.r.t. input, scale and shift through the batch statistics."""
    return kernels.op("batchnorm_backward")(x, params.scale, mean, inv_std,
                                            grad_out)


def upsample_nearest(x, target_h, target_w):
    """Nearest-neighbor resize: out(y, x) = in(y*H//tH, x*W//tW)."""
    x = as_tensor4(x, "upsample input")
    if target_h < x.shape[2] or target_w < x.shape[3]:
        raise ValueError(f"upsample target {target_h}x{target_w} smaller than "
                         f"source {x.shape[2]}x{x.shape[3]}")
    return kernels.op("upsample_nearest_forward")(x, target_h, target_w)


def upsample_nearest_backward(src_h, src_w, grad_out):
    """Adjoint of replication: sum each upstream gradient into its source."""
    grad_out = as_tensor4(grad_out, "upsample grad_out")
    return kernels.op("upsample_nearest_backward")(src_h, src_w, grad_out)


def concat_channels(xs):
    """Concatenate along the channel dimension, in the given order."""
    xs = [as_tensor4(x, f"concat input {i}") for i, x in enumerate(xs)]
    first = xs[0]
    for i, x in enumerate(xs):
        if (x.shape[0], x.shape[2], x.shape[3]) != (
                first.shape[0], first.shape[2], first.shape[3]):
            raise ShapeError(
                f"concat input {i} has batch/spatial shape "
                f"{(x.shape[0], x.shape[2], x.shape[3])}, expected "
                f"{(first.shape[0], first.shape[2], first.shape[3])}")
    return kernels.op("concat_channels")(xs)


def split_channels(grad_out, channel_counts):
    """Inverse of concat_channels for the backward pass."""
    grad_out = as_tensor4(grad_out, "split input")
    if sum(channel_counts) != grad_out.shape[1]:
        raise ShapeError(f"channel counts {channel_counts} do not sum to "
                         f"{grad_out.shape[1]}")
    return kernels.op("split_channels")(grad_out, channel_counts)


def softmax_channels(x):
    """Per-cell softmax over the channel dimension (stable, 64-bit sums)."""
    return kernels.op("softmax_channels")(as_tensor4(x, "softmax input"))
