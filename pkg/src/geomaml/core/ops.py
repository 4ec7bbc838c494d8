"""Neural-network operations on :class:`Tensor`.

Convolution is 3x3 with padding 1. Its input gradient is again a 3x3
convolution and its kernel gradient is :func:`conv2d_weight_grad`; the two
close over each other, which is what makes second-order gradients work.
"""
import numpy as np

from .. import _kernels
from .tensor import (
    DimensionError,
    Tensor,
    add,
    as_tensor,
    exp,
    flip,
    log,
    make,
    matmul,
    mean,
    mul,
    power,
    relu,
    reshape,
    sub,
    tsum,
    transpose,
)

__all__ = [
    "DimensionError",
    "conv2d",
    "conv2d_weight_grad",
    "maxpool2d",
    "relu",
    "batchnorm2d",
    "linear",
    "upsample2d",
    "softmax_cross_entropy",
    "pixel_cross_entropy",
]


class DegenerateStatisticsError(ValueError):
    """Batch statistics are undefined (fewer than two values per channel)."""


def _check_conv(x, w):
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects input [B,C,H,W], got {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects kernel [F,C,3,3], got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} has {x.shape[1]} channels, "
            f"kernel {w.shape} expects {w.shape[1]}")


def _flip_transpose(w):
    # kernel of the adjoint convolution: swap in/out channels, rotate 180 degrees
    return flip(transpose(w, (1, 0, 2, 3)), (2, 3))


def conv2d(x, w, b=None):
    """3x3 cross-correlation with zero padding 1, plus optional per-filter bias.

    Parameters
    ----------
    x : Tensor, shape (B, C, H, W)
    w : Tensor, shape (F, C, 3, 3)
    b : Tensor, shape (F,), optional

    Returns
    -------
    Tensor, shape (B, F, H, W)
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_conv(x, w)
    B, C, H, W = x.shape
    F = w.shape[0]
    cols = _kernels.im2col3(x.data).reshape(B * H * W, C * 9)
    out = cols @ w.data.reshape(F, C * 9).T
    out = np.ascontiguousarray(out.reshape(B, H, W, F).transpose(0, 3, 1, 2))

    def backward(g):
        gx = conv2d(g, _flip_transpose(w))
        gw = conv2d_weight_grad(x, g, cols=cols)
        return gx, gw

    y = make(out, (x, w), backward, "conv2d")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (F,):
            raise DimensionError(f"conv2d bias shape {b.shape} does not match {F} filters")
        y = add(y, reshape(b, (1, F, 1, 1)))
    return y


def conv2d_weight_grad(x, g, cols=None):
    """Kernel gradient of :func:`conv2d`: ``sum_{b,h,w} g[b,f,h,w] xpad[b,c,h+i,w+j]``.

    ``cols`` may carry a precomputed patch matrix of ``x``.
    """
    B, C, H, W = x.shape
    F = g.shape[1]
    if cols is None:
        cols = _kernels.im2col3(x.data).reshape(B * H * W, C * 9)
    gmat = g.data.transpose(1, 0, 2, 3).reshape(F, B * H * W)
    out = (gmat @ cols).reshape(F, C, 3, 3)

    def backward(h):
        return conv2d(g, _flip_transpose(h)), conv2d(x, h)

    return make(out, (x, g), backward, "conv2d_weight_grad")


def maxpool2d(x, size=2):
    """Non-overlapping 2x2 max-pool; gradient routes to the first maximum (row-major)."""
    x = as_tensor(x)
    if size != 2:
        raise DimensionError(f"only 2x2 pooling is supported, got size {size}")
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects [B,C,H,W], got {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"maxpool2d needs even spatial dimensions, got {x.shape}")
    out, arg = _kernels.maxpool2(x.data)
    return make(out, (x,), lambda g: (_unpool(g, arg),), "maxpool2d")


def _unpool(g, arg):
    return make(_kernels.unpool2(g.data, arg), (g,), lambda h: (_gatherpool(h, arg),), "unpool")


def _gatherpool(x, arg):
    return make(_kernels.gatherpool2(x.data, arg), (x,), lambda h: (_unpool(h, arg),), "gatherpool")


def batchnorm2d(x, gamma, beta, eps=1e-5):
    """Per-channel normalization with the current batch's statistics, then ``gamma*xhat + beta``."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if B * H * W < 2:
        raise DegenerateStatisticsError(
            f"batchnorm2d needs at least 2 values per channel, got B*H*W={B * H * W}")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm2d affine shapes {gamma.shape}, {beta.shape} != ({C},)")
    axes = (0, 2, 3)
    mu = mean(x, axis=axes, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=axes, keepdims=True)
    xhat = mul(xc, power(add(var, eps), -0.5))
    return add(mul(xhat, reshape(gamma, (1, C, 1, 1))), reshape(beta, (1, C, 1, 1)))


def linear(x, w, b):
    """``x @ w + b`` with ``w`` of shape (in, out)."""
    return add(matmul(x, w), reshape(b, (1, -1)) if b.ndim == 1 else b)


def upsample2d(x):
    """Nearest-neighbour x2 upsampling."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return make(out, (x,), lambda g: (_sumpool2(g),), "upsample2d")


def _sumpool2(x):
    B, C, H, W = x.shape
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))
    return make(out, (x,), lambda g: (upsample2d(g),), "sumpool2d")


def _validate_labels(labels, n, allow_ignore):
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValueError("labels must be integer class indices")
        labels = labels.astype(np.int64)
    lo = -1 if allow_ignore else 0
    bad = (labels < lo) | (labels >= n)
    if np.any(bad):
        raise ValueError(
            f"label {int(labels[bad].ravel()[0])} out of range [0, {n})")
    return labels.astype(np.int64)


def softmax_cross_entropy(logits, labels, ignore_index=False):
    """Mean over the batch of ``-log softmax(logits)[label]``.

    With ``ignore_index=True`` entries labelled ``-1`` are excluded from the mean.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [B,n] logits, got {logits.shape}")
    B, n = logits.shape
    labels = _validate_labels(labels, n, ignore_index).reshape(-1)
    if labels.shape[0] != B:
        raise DimensionError(f"{labels.shape[0]} labels for {B} logit rows")
    valid = labels >= 0
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no labelled entries to score")
    onehot = np.zeros((B, n))
    onehot[np.nonzero(valid)[0], labels[valid]] = 1.0
    shift = logits.data.max(axis=1, keepdims=True)
    z = sub(logits, shift)
    lse = log(tsum(exp(z), axis=1))
    picked = tsum(mul(z, onehot), axis=1)
    per_item = sub(lse, picked)
    return tsum(mul(per_item, valid.astype(np.float64) / count))


def pixel_cross_entropy(logits, labels, ignore_index=True):
    """Per-pixel softmax cross-entropy for [B,n,H,W] logits and [B,H,W] labels."""
    B, n, H, W = logits.shape
    flat = reshape(transpose(logits, (0, 2, 3, 1)), (B * H * W, n))
    return softmax_cross_entropy(flat, np.asarray(labels).reshape(-1), ignore_index=ignore_index)
