"""Differentiable layers: conv, pooling, batchnorm, dense, softmax, losses.

All layers are functions from Tensors to Tensors built on the tape in
:mod:`thermobyol.tensor`. Convolution is cross-correlation (no kernel flip);
spatial layout is NCHW throughout.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyOutput,
    InsufficientBatch,
    LabelOutOfRange,
    ShapeMismatch,
)
from .tensor import Parameter, Tensor, reduce


@dataclass
class Conv2dParams:
    weight: Parameter  # [out_ch, in_ch, kh, kw]
    bias: Parameter  # [out_ch]
    stride: int = 1
    padding: int = 0


@dataclass
class BatchNormParams:
    gamma: Parameter  # [ch]
    beta: Parameter  # [ch]
    running_mean: Parameter  # [ch], non-trainable
    running_var: Parameter  # [ch], non-trainable
    momentum: float = 0.1
    epsilon: float = 1e-5


@dataclass
class DenseParams:
    weight: Parameter  # [in, out]
    bias: Parameter  # [out]


def conv2d_out_hw(h, w, kh, kw, stride, padding):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    return ho, wo


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho, wo = conv2d_out_hw(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [n, c, ho, wo, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    return cols, ho, wo


def _col2im(dcols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    ho, wo = conv2d_out_hw(h, w, kh, kw, stride, pad)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dwin = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += dwin[
                :, :, :, :, i, j
            ]
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + w]
    return dxp


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Cross-correlation plus per-channel bias over an NCHW batch."""
    if x.rank != 4:
        raise ShapeMismatch(f"conv2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = p.weight.shape
    if c != in_ch:
        raise ShapeMismatch(f"conv2d channels: input {c} vs weight {in_ch}")
    ho, wo = conv2d_out_hw(h, w, kh, kw, p.stride, p.padding)
    if ho < 1 or wo < 1:
        raise EmptyOutput(f"conv2d output would be {ho}x{wo}")
    cols, _, _ = _im2col(x.data, kh, kw, p.stride, p.padding)
    wmat = p.weight.data.reshape(out_ch, -1).T  # [c*kh*kw, out_ch]
    out = cols @ wmat + p.bias.data
    out = out.reshape(n, ho, wo, out_ch).transpose(0, 3, 1, 2)

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, out_ch)
        dw = (cols.T @ g2).T.reshape(p.weight.shape)
        db = g2.sum(axis=0)
        dcols = g2 @ wmat.T
        dx = _col2im(dcols, (n, c, h, w), kh, kw, p.stride, p.padding)
        return dx, dw, db

    return Tensor(out, parents=(x, p.weight, p.bias), grad_fn=grad_fn)


def maxpool2d_out_hw(h, w, k, stride):
    return (h - k) // stride + 1, (w - k) // stride + 1


def maxpool2d(x: Tensor, k: int = 2, stride: int = None) -> Tensor:
    """Per-window max; gradient goes to the first row-major argmax per window."""
    if stride is None:
        stride = k
    if x.rank != 4:
        raise ShapeMismatch(f"maxpool2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeMismatch(f"maxpool2d window {k} exceeds input {h}x{w}")
    ho, wo = maxpool2d_out_hw(h, w, k, stride)
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [n, c, ho, wo, k, k]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        ni, ci, hi, wi = np.indices((n, c, ho, wo))
        rows = hi * stride + arg // k
        cols_ = wi * stride + arg % k
        np.add.at(dx, (ni, ci, rows, cols_), g)
        return (dx,)

    return Tensor(out, parents=(x,), grad_fn=grad_fn)


def batchnorm2d(x: Tensor, p: BatchNormParams, mode: str = "train") -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode uses batch statistics and folds them into the running stats
    by `new = (1 - momentum) * old + momentum * batch`; eval mode is a fixed
    affine map from the running stats.
    """
    if x.rank != 4:
        raise ShapeMismatch(f"batchnorm2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if c != p.gamma.shape[0]:
        raise ShapeMismatch(f"batchnorm2d channels: input {c} vs params {p.gamma.shape[0]}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    axes = (0, 2, 3)
    gamma = p.gamma.data[None, :, None, None]
    beta = p.beta.data[None, :, None, None]
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise InsufficientBatch("train-mode batchnorm needs N*H*W >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        std = np.sqrt(var + p.epsilon)
        xhat = (x.data - mean[None, :, None, None]) / std[None, :, None, None]
        out = gamma * xhat + beta
        mom = p.momentum
        p.running_mean.assign((1.0 - mom) * p.running_mean.data + mom * mean)
        p.running_var.assign((1.0 - mom) * p.running_var.data + mom * var)

        def grad_fn(g):
            dxhat = g * gamma
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = (dxhat - s1 / m - xhat * s2 / m) / std[None, :, None, None]
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            return dx, dgamma, dbeta

        return Tensor(out, parents=(x, p.gamma, p.beta), grad_fn=grad_fn)

    std = np.sqrt(p.running_var.data + p.epsilon)
    xhat = (x.data - p.running_mean.data[None, :, None, None]) / std[None, :, None, None]
    out = gamma * xhat + beta

    def grad_fn(g):
        dx = g * gamma / std[None, :, None, None]
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return dx, dgamma, dbeta

    return Tensor(out, parents=(x, p.gamma, p.beta), grad_fn=grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(
        np.where(mask, x.data, 0.0),
        parents=(x,),
        grad_fn=lambda g: (g * mask,),
    )


def dense(x: Tensor, p: DenseParams) -> Tensor:
    """x @ W + b over a [N, in] batch."""
    if x.rank != 2:
        raise ShapeMismatch(f"dense expects [N,in], got {x.shape}")
    if x.shape[1] != p.weight.shape[0]:
        raise ShapeMismatch(
            f"dense input dim {x.shape[1]} vs weight {p.weight.shape[0]}"
        )
    out = x.data @ p.weight.data + p.bias.data

    def grad_fn(g):
        return g @ p.weight.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, parents=(x, p.weight, p.bias), grad_fn=grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, [N,C,H,W] -> [N,C]."""
    if x.rank != 4:
        raise ShapeMismatch(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    return reduce("mean", x, axes=(2, 3))


def softmax(logits: Tensor) -> Tensor:
    """Row-wise stabilized softmax over [N, K]."""
    if logits.rank != 2:
        raise ShapeMismatch(f"softmax expects [N,K], got {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return Tensor(s, parents=(logits,), grad_fn=grad_fn)


def sparse_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.rank != 2:
        raise ShapeMismatch(f"sparse_cross_entropy expects [N,K], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} vs batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise LabelOutOfRange(f"labels must lie in [0,{k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    true_logit = shifted[np.arange(n), labels]
    loss = float((lse - true_logit).mean())

    def grad_fn(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return Tensor(np.asarray(loss, dtype=logits.data.dtype), parents=(logits,), grad_fn=grad_fn)
