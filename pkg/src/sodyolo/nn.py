"""Differentiable tensor primitives for the detector.

Feature maps are (C, H, W); an optional leading batch axis is accepted by
every operation. Scale stacks are (3, C, H, W) (or (N, 3, C, H, W)). All
primitives ship an analytic backward rule; ``grad_check`` verifies them
against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GradCheckError, InvalidArgumentError, UnsupportedConfigurationError
from .tensor import Tensor, as_tensor, no_grad


def param(data) -> Tensor:
    """Wrap an array as a trainable parameter tensor."""
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """Variance-preserving uniform init for leaky-relu stacks (no norm layers)."""
    bound = np.sqrt(6.0 / float(max(1, fan_in)))
    return rng.uniform(-bound, bound, size=shape)


def bias_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    k = 1.0 / np.sqrt(float(max(1, fan_in)))
    return rng.uniform(-k, k, size=shape)


# ---------------------------------------------------------------------------
# conv2d


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of (N?, C, H, W) with weight (Cout, Cin, k, k)."""
    x = as_tensor(x)
    weight, bias = as_tensor(weight), as_tensor(bias)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise InvalidArgumentError(f"conv2d: expected (C,H,W) or (N,C,H,W), got {x.shape}")
    if weight.ndim == 4 and x.shape[-3] != weight.shape[1]:
        raise InvalidArgumentError(
            f"conv2d: input shape {x.shape} does not match weight shape {weight.shape}")
    x4 = x if batched else x.reshape((1,) + x.shape)
    out = _conv2d4(x4, weight, bias, int(stride), int(padding))
    return out if batched else out.reshape(out.shape[1:])


def _conv2d4(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    xd, wd = x.data, weight.data
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise InvalidArgumentError(f"conv2d: weight must be (Cout,Cin,k,k), got {wd.shape}")
    n, c, h, w = xd.shape
    c_out, c_in, k, _ = wd.shape
    if c != c_in:
        raise InvalidArgumentError(
            f"conv2d: input shape {xd.shape} does not match weight shape {wd.shape}")
    if bias.data.shape != (c_out,):
        raise InvalidArgumentError(
            f"conv2d: bias shape {bias.data.shape} does not match weight shape {wd.shape}")
    if stride < 1 or padding < 0:
        raise InvalidArgumentError(f"conv2d: stride={stride}, padding={padding}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise InvalidArgumentError(
            f"conv2d: kernel {wd.shape} does not fit input {xd.shape} (padding={padding})")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h_out * w_out, c * k * k)
    out = cols @ wd.reshape(c_out, -1).T + bias.data
    out = np.ascontiguousarray(out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2))

    hp, wp = xp.shape[2], xp.shape[3]

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c_out)
        db = gm.sum(axis=0)
        dw = (gm.T @ cols).reshape(wd.shape)
        dcols = (gm @ wd.reshape(c_out, -1)).reshape(n, h_out, w_out, c, k, k)
        dxp = np.zeros((n, c, hp, wp))
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + h_out * stride:stride, kj:kj + w_out * stride:stride] += \
                    dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return dx, dw, db

    return Tensor._result(out, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# scale-stack operations


def _scale_axis(x: Tensor, op_name: str) -> int:
    if x.ndim == 4:
        return 0
    if x.ndim == 5:
        return 1
    raise InvalidArgumentError(
        f"{op_name}: expected (S,C,H,W) or (N,S,C,H,W), got {x.shape}")


def conv3d_scale(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1x1x1 3-D convolution over a scale stack: per-voxel channel mixing."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _scale_axis(x, "conv3d_scale")
    wd = weight.data
    if wd.ndim != 5:
        raise InvalidArgumentError(f"conv3d_scale: weight must be 5-D, got {wd.shape}")
    if wd.shape[2:] != (1, 1, 1):
        raise UnsupportedConfigurationError(
            f"conv3d_scale: only a (1,1,1) kernel is supported, got {wd.shape[2:]}")
    c_out, c_in = wd.shape[0], wd.shape[1]
    if x.shape[-3] != c_in:
        raise InvalidArgumentError(
            f"conv3d_scale: input shape {x.shape} does not match weight shape {wd.shape}")

    batched = x.ndim == 5
    x5 = x if batched else x.reshape((1,) + x.shape)
    n, s, _, h, w = x5.shape
    flat = x5.transpose(0, 1, 3, 4, 2).reshape(n * s * h * w, c_in)
    w_mat = weight.reshape(c_out, c_in).transpose(1, 0)
    out = (flat @ w_mat + bias).reshape(n, s, h, w, c_out).transpose(0, 1, 4, 2, 3)
    return out if batched else out.reshape(out.shape[1:])


@dataclass
class BNStats:
    """Running statistics owned by the enclosing model (mutated in training)."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1) -> "BNStats":
        return cls(mean=np.zeros(channels), var=np.ones(channels), momentum=momentum)


def batchnorm_scale(x: Tensor, gamma: Tensor, beta: Tensor, eps: float,
                    running_stats: BNStats, training: bool) -> Tensor:
    """Normalize a scale stack per channel, pooling over (batch, scale, H, W)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _scale_axis(x, "batchnorm_scale")
    if eps <= 0:
        raise InvalidArgumentError(f"batchnorm_scale: eps must be > 0, got {eps}")
    c = x.shape[-3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise InvalidArgumentError(
            f"batchnorm_scale: gamma/beta shapes {gamma.shape}/{beta.shape} "
            f"do not match {c} channels")
    axes = (0, 2, 3) if x.ndim == 4 else (0, 1, 3, 4)
    g = gamma.reshape(c, 1, 1)
    b = beta.reshape(c, 1, 1)

    if training:
        m = x.mean(axis=axes, keepdims=True)
        v = ((x - m) ** 2).mean(axis=axes, keepdims=True)
        out = (x - m) / (v + eps).sqrt() * g + b
        n = x.size // c
        mom = running_stats.momentum
        batch_mean = m.data.reshape(c)
        batch_var = v.data.reshape(c)
        if n > 1:
            batch_var = batch_var * (n / (n - 1.0))
        running_stats.mean = (1.0 - mom) * running_stats.mean + mom * batch_mean
        running_stats.var = (1.0 - mom) * running_stats.var + mom * batch_var
        return out

    rm = Tensor(running_stats.mean.reshape(c, 1, 1))
    rv = Tensor(running_stats.var.reshape(c, 1, 1))
    return (x - rm) / (rv + eps).sqrt() * g + b


def maxpool3d_scale(x: Tensor) -> Tensor:
    """Collapse the scale axis of a (3, C, H, W) stack by elementwise max."""
    x = as_tensor(x)
    axis = _scale_axis(x, "maxpool3d_scale")
    if x.shape[axis] != 3:
        raise InvalidArgumentError(
            f"maxpool3d_scale: scale dimension must be 3, got shape {x.shape}")
    return x.max(axis=axis)


# ---------------------------------------------------------------------------
# resampling and 2-D pooling


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor upsampling of the two trailing spatial axes."""
    x = as_tensor(x)
    if isinstance(factor, bool) or not isinstance(factor, (int, np.integer)):
        raise UnsupportedConfigurationError(
            f"upsample_nearest: integer factors only, got {factor!r}")
    if factor < 1:
        raise InvalidArgumentError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if x.ndim not in (3, 4):
        raise InvalidArgumentError(f"upsample_nearest: expected 3-D or 4-D input, got {x.shape}")
    if factor == 1:
        return x * 1.0
    f = int(factor)
    h, w = x.shape[-2], x.shape[-1]
    data = x.data.repeat(f, axis=-2).repeat(f, axis=-1)
    lead = x.shape[:-2]

    def backward(g):
        return (g.reshape(lead + (h, f, w, f)).sum(axis=(-3, -1)),)

    return Tensor._result(data, (x,), backward)


def maxpool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Spatial max pooling over k x k windows (padding uses -inf)."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise InvalidArgumentError(f"maxpool2d: expected 3-D or 4-D input, got {x.shape}")
    if k < 1 or stride < 1 or padding < 0:
        raise InvalidArgumentError(f"maxpool2d: k={k}, stride={stride}, padding={padding}")
    batched = x.ndim == 4
    x4 = x if batched else x.reshape((1,) + x.shape)
    out = _maxpool2d4(x4, int(k), int(stride), int(padding))
    return out if batched else out.reshape(out.shape[1:])


def _maxpool2d4(x: Tensor, k: int, stride: int, padding: int) -> Tensor:
    xd = x.data
    n, c, h, w = xd.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise InvalidArgumentError(f"maxpool2d: window {k} does not fit input {xd.shape}")
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, h_out, w_out, k * k)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    hp, wp = xp.shape[2], xp.shape[3]

    def backward(g):
        ni, ci, ii, ji = np.indices((n, c, h_out, w_out), sparse=False)
        rows = ii * stride + idx // k
        cols = ji * stride + idx % k
        dxp = np.zeros((n, c, hp, wp))
        np.add.at(dxp, (ni, ci, rows, cols), g)
        return (dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward)


# ---------------------------------------------------------------------------
# activations and pooling helpers


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise InvalidArgumentError(f"leaky_relu: slope must be in (0,1), got {slope}")
    x = as_tensor(x)
    mask = x.data >= 0
    data = np.where(mask, x.data, slope * x.data)
    return Tensor._result(data, (x,), lambda g: (g * np.where(mask, 1.0, slope),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = _sigmoid_np(x.data)
    return Tensor._result(data, (x,), lambda g: (g * data * (1.0 - data),))


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = _sigmoid_np(x.data)
    return Tensor._result(data, (x,), lambda g: (g * sig,))


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (C,H,W) -> (C,) or (N,C,H,W) -> (N,C)."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise InvalidArgumentError(f"global_avg_pool: expected 3-D or 4-D input, got {x.shape}")
    return x.mean(axis=(-2, -1))


# ---------------------------------------------------------------------------
# layer plumbing


@dataclass
class Conv2dLayer:
    """Parameter bundle for one 2-D convolution."""
    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    @classmethod
    def create(cls, rng: np.random.Generator, c_in: int, c_out: int, k: int,
               stride: int = 1, padding: int | None = None) -> "Conv2dLayer":
        if padding is None:
            padding = k // 2
        fan_in = c_in * k * k
        return cls(weight=param(he_uniform(rng, (c_out, c_in, k, k), fan_in)),
                   bias=param(bias_uniform(rng, (c_out,), fan_in)),
                   stride=stride, padding=padding)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(op: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-5, max_checks: int | None = None,
               seed: int = 0) -> float:
    """Compare analytic gradients of a scalar-valued op to central differences.

    Returns the max over checked elements of
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.
    `max_checks` caps the number of perturbed elements (deterministic sample)
    so whole-model checks stay tractable; by default every element is checked.
    """
    name = getattr(op, "__name__", repr(op))
    params = [Tensor(np.array(t.data, dtype=np.float64, copy=True), requires_grad=True)
              for t in inputs]
    out = op(*params)
    if out.size != 1:
        raise InvalidArgumentError(f"grad_check: {name} must be scalar-valued, got {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradCheckError(f"non-finite output while checking {name}")
    out.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for a in analytic:
        if not np.isfinite(a).all():
            raise GradCheckError(f"non-finite analytic gradient while checking {name}")

    coords = [(pi, i) for pi, p in enumerate(params) for i in range(p.data.size)]
    if max_checks is not None and len(coords) > max_checks:
        rng = np.random.Generator(np.random.PCG64(seed))
        chosen = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[i] for i in sorted(chosen)]

    max_err = 0.0
    with no_grad():
        for pi, i in coords:
            data = params[pi].data
            orig = data.flat[i]
            data.flat[i] = orig + eps
            f_plus = op(*params).item()
            data.flat[i] = orig - eps
            f_minus = op(*params).item()
            data.flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"non-finite perturbed value while checking {name}")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[pi].flat[i]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            max_err = max(max_err, err)
    return max_err
