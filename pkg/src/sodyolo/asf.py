"""Scale-sequence fusion and attention refinement for the detector neck.

``scalseq`` unifies three pyramid levels to a common channel width, aligns
them spatially by nearest-neighbor upsampling, stacks them along a scale
axis, and fuses with a 1x1x1 3-D convolution + scale batch norm + LeakyReLU
before collapsing the scale axis with a 3-element max pool.

``attention_model`` applies squeeze-excitation channel gating to its first
input, adds the second input, and applies a spatial gate built from the
per-position channel mean and max.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import InvalidArgumentError
from .nn import BNStats, Conv2dLayer
from .tensor import Tensor, concat, stack


@dataclass
class ScalSeqParams:
    unify: list[Conv2dLayer]        # three 1x1 convs, one per input level
    fuse_weight: Tensor             # (c_out, c_out, 1, 1, 1)
    fuse_bias: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    bn_stats: BNStats
    c_out: int
    bn_eps: float = 1e-5
    slope: float = 0.01

    @classmethod
    def create(cls, rng: np.random.Generator, in_channels: tuple[int, int, int],
               c_out: int, bn_eps: float = 1e-5, bn_momentum: float = 0.1,
               slope: float = 0.01) -> "ScalSeqParams":
        unify = [Conv2dLayer.create(rng, c, c_out, 1) for c in in_channels]
        return cls(
            unify=unify,
            fuse_weight=nn.param(nn.he_uniform(rng, (c_out, c_out, 1, 1, 1), c_out)),
            fuse_bias=nn.param(nn.bias_uniform(rng, (c_out,), c_out)),
            bn_gamma=nn.param(np.ones(c_out)),
            bn_beta=nn.param(np.zeros(c_out)),
            bn_stats=BNStats.create(c_out, bn_momentum),
            c_out=c_out, bn_eps=bn_eps, slope=slope)


def _spatial(t: Tensor) -> tuple[int, int]:
    return t.shape[-2], t.shape[-1]


def scalseq(p_small: Tensor, p_mid: Tensor, p_large: Tensor,
            params: ScalSeqParams, training: bool = False) -> Tensor:
    """Fuse three pyramid levels into one map at the finest level's resolution."""
    shapes = (p_small.shape, p_mid.shape, p_large.shape)
    h, w = _spatial(p_small)
    hm, wm = _spatial(p_mid)
    hl, wl = _spatial(p_large)
    if (hm * 2, wm * 2) != (h, w) or (hl * 4, wl * 4) != (h, w):
        raise InvalidArgumentError(
            f"scalseq: spatial sizes must be (H,W), (H/2,W/2), (H/4,W/4); got {shapes}")
    if not (p_small.ndim == p_mid.ndim == p_large.ndim):
        raise InvalidArgumentError(f"scalseq: mixed batched/unbatched inputs {shapes}")

    u_small = params.unify[0](p_small)
    u_mid = nn.upsample_nearest(params.unify[1](p_mid), 2)
    u_large = nn.upsample_nearest(params.unify[2](p_large), 4)

    scale_axis = 0 if p_small.ndim == 3 else 1
    stacked = stack([u_small, u_mid, u_large], axis=scale_axis)
    fused = nn.conv3d_scale(stacked, params.fuse_weight, params.fuse_bias)
    normed = nn.batchnorm_scale(fused, params.bn_gamma, params.bn_beta,
                                params.bn_eps, params.bn_stats, training)
    activated = nn.leaky_relu(normed, params.slope)
    return nn.maxpool3d_scale(activated)


@dataclass
class AttentionParams:
    w1: Tensor                      # (C/r, C) squeeze
    b1: Tensor
    w2: Tensor                      # (C, C/r) excite
    b2: Tensor
    spatial: Conv2dLayer            # (1, 2, k, k) gate over [mean, max]
    channels: int
    reduction: int = 4
    kernel: int = 7
    slope: float = 0.01

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, reduction: int = 4,
               kernel: int = 7, slope: float = 0.01) -> "AttentionParams":
        if reduction < 1 or channels % reduction != 0:
            raise InvalidArgumentError(
                f"attention: channels {channels} not divisible by reduction {reduction}")
        if kernel % 2 == 0:
            raise InvalidArgumentError(f"attention: kernel must be odd, got {kernel}")
        hidden = channels // reduction
        return cls(
            w1=nn.param(nn.he_uniform(rng, (hidden, channels), channels)),
            b1=nn.param(nn.bias_uniform(rng, (hidden,), channels)),
            w2=nn.param(nn.he_uniform(rng, (channels, hidden), hidden)),
            b2=nn.param(nn.bias_uniform(rng, (channels,), hidden)),
            spatial=Conv2dLayer.create(rng, 2, 1, kernel),
            channels=channels, reduction=reduction, kernel=kernel, slope=slope)


def channel_attention(x: Tensor, params: AttentionParams) -> Tensor:
    """Scale each channel by a squeeze-excitation gate in (0, 1)."""
    c = x.shape[-3]
    if c != params.channels:
        raise InvalidArgumentError(
            f"channel_attention: input has {c} channels, params expect {params.channels}")
    batched = x.ndim == 4
    pooled = nn.global_avg_pool(x)                       # (C,) or (N,C)
    v = pooled.reshape(1, c) if not batched else pooled
    hidden = nn.leaky_relu(v @ params.w1.transpose(1, 0) + params.b1, params.slope)
    gate = nn.sigmoid(hidden @ params.w2.transpose(1, 0) + params.b2)
    gate = gate.reshape((c, 1, 1) if not batched else (x.shape[0], c, 1, 1))
    return x * gate


def local_attention(x: Tensor, params: AttentionParams) -> Tensor:
    """Scale every position by a spatial gate in (0, 1)."""
    if params.kernel % 2 == 0:
        raise InvalidArgumentError(f"local_attention: kernel must be odd, got {params.kernel}")
    chan_axis = x.ndim - 3
    mean_map = x.mean(axis=chan_axis, keepdims=True)
    max_map = x.max(axis=chan_axis, keepdims=True)
    gate = nn.sigmoid(params.spatial(concat([mean_map, max_map], axis=chan_axis)))
    return x * gate


def attention_model(x1: Tensor, x2: Tensor, params: AttentionParams) -> Tensor:
    """Channel-gate the first input, add the second, then spatially gate the sum."""
    if x1.shape != x2.shape:
        raise InvalidArgumentError(
            f"attention_model: shapes {x1.shape} and {x2.shape} differ")
    return local_attention(channel_attention(x1, params) + x2, params)
