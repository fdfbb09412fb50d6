"""Network assembly: three downsampling blocks, multi-depth feature fusion,
and a two-channel classification head ending in a per-cell softmax.

Layer layout (full model / context ablation):

* block1: conv 3->8 7x7 stride 2, conv 8->8 3x3, each with batch norm and
  ReLU, then 2x2 max pool;
* block2: conv 8->16, conv 16->16 (same pattern), pool;
* block3: conv 16->32, conv 32->32 (same pattern), pool;
* head: the block outputs are resized to block1's map and concatenated
  (8+16+32 = 56 channels); conv 56->56 with bias, batch norm and ReLU,
  then conv 56->2 with bias feeding the softmax.  With fusion disabled the
  head reads the resized block3 output alone and shrinks to 32->32->2.

Backbone convolutions carry no bias (the batch-norm shift absorbs it);
the first head convolution keeps bias and batch norm, the final one has
bias only.  This is the unique placement that lands exactly on 48,658
trainable scalars for the full model and 29,146 for the ablation.

The confidence map is at 1/4 input resolution: cell counts are
floor(ceil(dim / 2) / 2) per axis.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError

EXPECTED_PARAM_COUNTS = {True: 48_658, False: 29_146}


@dataclass
class ModelConfig:
    """Architecture switches plus the constants a checkpoint must carry."""

    hypercolumn: bool = True
    input_channels: int = 3
    scaling_factor: int = 4
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    norm_offset: float = 0.5   # input pixels map to (p/255 - offset) / scale
    norm_scale: float = 0.5

    def __post_init__(self):
        if self.scaling_factor != 4:
            raise ValueError("the decode formulas assume scaling factor 4")
        if self.input_channels != 3:
            raise ValueError("the detector consumes 3-channel images")


@dataclass
class ConvUnit:
    """One convolution with optional batch norm and ReLU."""

    name: str
    conv: ops.ConvLayerParams
    bn: ops.BatchNormParams | None
    relu: bool


@dataclass
class Model:
    config: ModelConfig
    block1: list
    block2: list
    block3: list
    head: list

    def blocks(self):
        return [("block1", self.block1), ("block2", self.block2),
                ("block3", self.block3), ("head", self.head)]

    def units(self):
        for _, block in self.blocks():
            yield from block


def _unit(name, rng, in_ch, out_ch, k, stride, with_bias, with_bn, relu, cfg):
    bound = np.sqrt(6.0 / (in_ch * k * k))
    weights = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(
        np.float32)
    bias = np.zeros(out_ch, dtype=np.float32) if with_bias else None
    bn = None
    if with_bn:
        bn = ops.BatchNormParams.identity(out_ch, epsilon=cfg.bn_epsilon,
                                          momentum=cfg.bn_momentum)
    return ConvUnit(name=name,
                    conv=ops.ConvLayerParams(weights=weights, bias=bias,
                                             stride=stride),
                    bn=bn, relu=relu)


def build_model(config=None, seed=0):
    """Construct the network with fan-in uniform init, deterministic by seed."""
    cfg = config if config is not None else ModelConfig()
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x1)))
    block1 = [
        _unit("conv1a", rng, cfg.input_channels, 8, 7, 2, False, True, True, cfg),
        _unit("conv1b", rng, 8, 8, 3, 1, False, True, True, cfg),
    ]
    block2 = [
        _unit("conv2a", rng, 8, 16, 3, 1, False, True, True, cfg),
        _unit("conv2b", rng, 16, 16, 3, 1, False, True, True, cfg),
    ]
    block3 = [
        _unit("conv3a", rng, 16, 32, 3, 1, False, True, True, cfg),
        _unit("conv3b", rng, 32, 32, 3, 1, False, True, True, cfg),
    ]
    head_in = 56 if cfg.hypercolumn else 32
    head = [
        _unit("conv4a", rng, head_in, head_in, 3, 1, True, True, True, cfg),
        _unit("conv4b", rng, head_in, 2, 3, 1, True, False, False, cfg),
    ]
    model = Model(config=cfg, block1=block1, block2=block2, block3=block3,
                  head=head)
    count = parameter_count(model)
    expected = EXPECTED_PARAM_COUNTS[cfg.hypercolumn]
    assert count == expected, (
        f"trainable parameter count {count} != published {expected}")
    return model


def named_parameters(model):
    """Trainable arrays in a stable order: weight, bias, bn scale, bn shift."""
    out = []
    for unit in model.units():
        out.append((f"{unit.name}.weight", unit.conv.weights))
        if unit.conv.bias is not None:
            out.append((f"{unit.name}.bias", unit.conv.bias))
        if unit.bn is not None:
            out.append((f"{unit.name}.bn_scale", unit.bn.scale))
            out.append((f"{unit.name}.bn_shift", unit.bn.shift))
    return out


def named_state_arrays(model):
    """All persistent arrays: trainable parameters plus running statistics."""
    out = list(named_parameters(model))
    for unit in model.units():
        if unit.bn is not None:
            out.append((f"{unit.name}.bn_running_mean", unit.bn.running_mean))
            out.append((f"{unit.name}.bn_running_var", unit.bn.running_var))
    return out


def parameter_count(model):
    return sum(int(a.size) for _, a in named_parameters(model))


@dataclass
class _UnitCache:
    x: np.ndarray
    conv_out: np.ndarray
    bn_mean: np.ndarray | None
    bn_inv_std: np.ndarray | None
    out: np.ndarray


@dataclass
class ForwardCache:
    """Intermediates from a train-mode forward, consumed by backward()."""

    unit_caches: dict
    pool_idx: dict
    pool_in_shape: dict
    fuse_src_hw: dict     # per block: feature map size before resize
    map_hw: tuple
    logits: np.ndarray


def _run_unit(unit, x, mode, cache):
    conv_out = ops.conv2d(x, unit.conv)
    out = conv_out
    bn_mean = bn_inv_std = None
    if unit.bn is not None:
        out, bn_mean, bn_inv_std = ops.batchnorm(out, unit.bn, mode)
    pre_relu = out
    if unit.relu:
        out = ops.relu(out)
    if cache is not None:
        cache.unit_caches[unit.name] = _UnitCache(
            x=x, conv_out=conv_out, bn_mean=bn_mean, bn_inv_std=bn_inv_std,
            out=pre_relu)
    return out


def _run_block(name, units, x, mode, cache):
    for unit in units:
        x = _run_unit(unit, x, mode, cache)
    pooled, idx = ops.maxpool2x2(x)
    if cache is not None:
        cache.pool_idx[name] = idx
        cache.pool_in_shape[name] = x.shape
    return pooled


def forward(model, images, mode="infer"):
    """Run the network; train mode returns (confidence_map, cache).

    The confidence map has shape (n, 2, floor(ceil(H/2)/2),
    floor(ceil(W/2)/2)); channel 0 is background probability, channel 1
    ball probability.
    """
    images = ops.as_tensor4(images, "input images")
    if images.shape[1] != model.config.input_channels:
        raise ShapeError(f"expected {model.config.input_channels}-channel "
                         f"input, got shape {images.shape}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    cache = None
    if mode == "train":
        cache = ForwardCache(unit_caches={}, pool_idx={}, pool_in_shape={},
                             fuse_src_hw={}, map_hw=(0, 0), logits=None)

    f1 = _run_block("block1", model.block1, images, mode, cache)
    f2 = _run_block("block2", model.block2, f1, mode, cache)
    f3 = _run_block("block3", model.block3, f2, mode, cache)

    map_h, map_w = f1.shape[2], f1.shape[3]
    if model.config.hypercolumn:
        f2_up = ops.upsample_nearest(f2, map_h, map_w)
        f3_up = ops.upsample_nearest(f3, map_h, map_w)
        fused = ops.concat_channels([f1, f2_up, f3_up])
    else:
        fused = ops.upsample_nearest(f3, map_h, map_w)
    if cache is not None:
        cache.fuse_src_hw["block2"] = (f2.shape[2], f2.shape[3])
        cache.fuse_src_hw["block3"] = (f3.shape[2], f3.shape[3])
        cache.map_hw = (map_h, map_w)

    x = fused
    for unit in model.head:
        x = _run_unit(unit, x, mode, cache)
    logits = x
    conf = ops.softmax_channels(logits)
    if cache is not None:
        cache.logits = logits
        return conf, cache
    return conf


def _unit_backward(unit, ucache, grad_out, grads):
    if unit.relu:
        # relu(x) > 0 iff x > 0, so the cached pre-relu output is a valid mask.
        grad_out = ops.relu_backward(ucache.out, grad_out)
    if unit.bn is not None:
        grad_out, g_scale, g_shift = ops.batchnorm_backward(
            ucache.conv_out, unit.bn, ucache.bn_mean, ucache.bn_inv_std,
            grad_out)
        grads[f"{unit.name}.bn_scale"] = g_scale
        grads[f"{unit.name}.bn_shift"] = g_shift
    gx, gw, gb = ops.conv2d_backward(ucache.x, unit.conv, grad_out)
    grads[f"{unit.name}.weight"] = gw
    if gb is not None:
        grads[f"{unit.name}.bias"] = gb
    return gx


def _block_backward(name, units, cache, grad_out, grads):
    grad = ops.maxpool2x2_backward(cache.pool_in_shape[name],
                                   cache.pool_idx[name], grad_out)
    for unit in reversed(units):
        grad = _unit_backward(unit, cache.unit_caches[unit.name], grad, grads)
    return grad


def backward(model, cache, grad_logits):
    """Gradients of sum(grad_logits * logits) w.r.t. every trainable array.

    Requires the cache from a train-mode forward on the same batch.
    """
    if cache is None:
        raise RuntimeError("backward needs the cache from a train-mode forward")
    grad_logits = ops.as_tensor4(grad_logits, "grad_logits")
    if grad_logits.shape != cache.logits.shape:
        raise ShapeError(f"grad_logits shape {grad_logits.shape} does not "
                         f"match logits shape {cache.logits.shape}")
    grads = {}
    grad = grad_logits
    for unit in reversed(model.head):
        grad = _unit_backward(unit, cache.unit_caches[unit.name], grad, grads)

    if model.config.hypercolumn:
        g1, g2_up, g3_up = ops.split_channels(grad, [8, 16, 32])
        g2 = ops.upsample_nearest_backward(*cache.fuse_src_hw["block2"], g2_up)
        g3 = ops.upsample_nearest_backward(*cache.fuse_src_hw["block3"], g3_up)
    else:
        g1 = None
        g2 = None
        g3 = ops.upsample_nearest_backward(*cache.fuse_src_hw["block3"], grad)

    grad = _block_backward("block3", model.block3, cache, g3, grads)
    if g2 is not None:
        grad = grad + g2
    grad = _block_backward("block2", model.block2, cache, grad, grads)
    if g1 is not None:
        grad = grad + g1
    _block_backward("block1", model.block1, cache, grad, grads)
    return grads


def confidence_map_hw(h, w):
    """Spatial size of the confidence map for an h-by-w input."""
    return (-(-h // 2)) // 2, (-(-w // 2)) // 2
