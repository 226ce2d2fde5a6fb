"""Stateless forward/backward kernels on plain numpy arrays.

Layouts: 1-D feature maps are (N, C, L), 2-D maps are (N, C, H, W), point
sets are (N, P, C). Class labels passed to the loss helpers are 0-based.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from ..errors import AllMasked, ClampedProbability, ShapeError

PROB_FLOOR = 1e-12


def out_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


# --- convolution -----------------------------------------------------------

def _im2col_1d(x, k, stride, padding):
    n, c, length = x.shape
    lo = out_size(length, k, stride, padding)
    if lo < 1:
        raise ShapeError(f"kernel {k} does not fit input length {length} with padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = np.stack([xp[:, :, i:i + stride * (lo - 1) + 1:stride] for i in range(k)], axis=2)
    return cols.reshape(n, c * k, lo), lo


def _col2im_1d(dcols, x_shape, k, stride, padding, lo):
    n, c, length = x_shape
    dcols = dcols.reshape(n, c, k, lo)
    dxp = np.zeros((n, c, length + 2 * padding), dtype=dcols.dtype)
    for i in range(k):
        dxp[:, :, i:i + stride * (lo - 1) + 1:stride] += dcols[:, :, i]
    return dxp[:, :, padding:padding + length] if padding else dxp


def conv1d_forward(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation; weight is (C_out, C_in, k). Returns (out, cache)."""
    x = np.asarray(x)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d input {x.shape} incompatible with weight {weight.shape}")
    o, c, k = weight.shape
    cols, lo = _im2col_1d(x, k, stride, padding)
    out = np.matmul(weight.reshape(o, c * k), cols)
    if bias is not None:
        out += bias[None, :, None]
    return out, (x.shape, cols, lo, stride, padding)


def conv1d_backward(dout, weight, cache):
    x_shape, cols, lo, stride, padding = cache
    o, c, k = weight.shape
    dw = np.einsum("nol,nkl->ok", dout, cols).reshape(weight.shape)
    db = dout.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(o, c * k).T, dout)
    return _col2im_1d(dcols, x_shape, k, stride, padding, lo), dw, db


def _im2col_2d(x, k, stride, padding):
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride, padding), out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k} does not fit input {h}x{w} with padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    cols = np.stack(
        [xp[:, :, i:i + hs:stride, j:j + ws:stride] for i in range(k) for j in range(k)], axis=2
    )  # (N, C, k*k, Ho, Wo)
    return cols, ho, wo


def _col2im_2d(dcols, x_shape, k, stride, padding, ho, wo):
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, c, k * k, ho, wo)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + hs:stride, j:j + ws:stride] += dcols[:, :, i * k + j]
    return dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp


def conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation; weight is (C_out, C_in, k, k). Returns (out, cache)."""
    x = np.asarray(x)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1] or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d input {x.shape} incompatible with weight {weight.shape}")
    o, c, k, _ = weight.shape
    n = x.shape[0]
    if k == 1 and stride == 1 and padding == 0:
        cols, ho, wo = x.reshape(n, c, -1), x.shape[2], x.shape[3]
    else:
        cols, ho, wo = _im2col_2d(x, k, stride, padding)
        cols = cols.reshape(n, c * k * k, ho * wo)
    out = np.matmul(weight.reshape(o, c * k * k), cols).reshape(n, o, ho, wo)
    if bias is not None:
        out += bias[None, :, None, None]
    return out, (x.shape, cols, ho, wo, stride, padding)


def conv2d_backward(dout, weight, cache):
    x_shape, cols, ho, wo, stride, padding = cache
    o, c, k, _ = weight.shape
    n = dout.shape[0]
    g = dout.reshape(n, o, ho * wo)
    dw = np.einsum("nop,nkp->ok", g, cols, optimize=True).reshape(weight.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.matmul(weight.reshape(o, c * k * k).T, g)
    if k == 1 and stride == 1 and padding == 0:
        return dcols.reshape(x_shape), dw, db
    return _col2im_2d(dcols, x_shape, k, stride, padding, ho, wo), dw, db


def depthwise_conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    """Per-channel 2-D cross-correlation; weight is (C, k, k)."""
    x = np.asarray(x)
    if x.ndim != 4 or weight.ndim != 3 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"depthwise input {x.shape} incompatible with weight {weight.shape}")
    c, k, _ = weight.shape
    cols, ho, wo = _im2col_2d(x, k, stride, padding)
    out = np.einsum("ncjhw,cj->nchw", cols, weight.reshape(c, k * k), optimize=True)
    if bias is not None:
        out += bias[None, :, None, None]
    return out, (x.shape, cols, ho, wo, stride, padding)


def depthwise_conv2d_backward(dout, weight, cache):
    x_shape, cols, ho, wo, stride, padding = cache
    c, k, _ = weight.shape
    dw = np.einsum("ncjhw,nchw->cj", cols, dout, optimize=True).reshape(weight.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = weight.reshape(1, c, k * k, 1, 1) * dout[:, :, None]
    return _col2im_2d(dcols, x_shape, k, stride, padding, ho, wo), dw, db


# --- pooling ---------------------------------------------------------------

def maxpool1d_forward(x, window, stride=None, mask=None, ceil_mode=False):
    """Windowed max along the last axis of (N, C, L).

    ``mask`` is (N, L) with True marking usable positions; masked positions
    behave as -inf. With ``ceil_mode`` a trailing partial window is kept.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    stride = stride or window
    x = np.asarray(x, dtype=float)
    n, c, length = x.shape
    if ceil_mode:
        lo = max(1, -(-(length - window) // stride) + 1) if length >= window else 1
    else:
        lo = (length - window) // stride + 1
    if lo < 1:
        raise ShapeError(f"window {window} longer than input length {length}")
    need = stride * (lo - 1) + window
    xm = x if mask is None else np.where(np.asarray(mask, bool)[:, None, :], x, -np.inf)
    if need > length:
        xm = np.pad(xm, ((0, 0), (0, 0), (0, need - length)), constant_values=-np.inf)
    win = np.stack([xm[:, :, j:j + stride * (lo - 1) + 1:stride] for j in range(window)], axis=2)
    arg = win.argmax(axis=2)  # (N, C, Lo)
    out = np.take_along_axis(win, arg[:, :, None], axis=2)[:, :, 0]
    if np.isneginf(out).any():
        raise AllMasked("a pooling window contains no unmasked positions")
    src = arg + stride * np.arange(lo)  # index into the input
    return out, (x.shape, src)


def maxpool1d_backward(dout, cache):
    shape, src = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    n, c, _ = shape
    ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    np.add.at(dx, (ni[:, :, None], ci[:, :, None], src), dout)
    return dx


def masked_global_max(x, mask=None):
    """Max over the point axis of (N, P, C); returns (out (N, C), argmax (N, C))."""
    x = np.asarray(x, dtype=float)
    if mask is not None:
        mask = np.asarray(mask, bool)
        if not mask.any(axis=1).all():
            raise AllMasked("a point set has no unmasked points")
        x = np.where(mask[:, :, None], x, -np.inf)
    elif x.shape[1] == 0:
        raise AllMasked("empty point set")
    arg = x.argmax(axis=1)
    return np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0], arg


def segment_max(values, offsets):
    """Column-wise max of each row segment ``values[offsets[i]:offsets[i+1]]``."""
    n_seg = len(offsets) - 1
    out = np.empty((n_seg, values.shape[1]), dtype=values.dtype)
    arg = np.empty((n_seg, values.shape[1]), dtype=np.intp)
    cols = np.arange(values.shape[1])
    for s in range(n_seg):
        a, b = offsets[s], offsets[s + 1]
        if b <= a:
            raise AllMasked(f"point set {s} has no unmasked points")
        idx = values[a:b].argmax(axis=0)
        arg[s] = idx + a
        out[s] = values[idx + a, cols]
    return out, arg


def segment_max_backward(dout, arg, n_rows):
    dx = np.zeros((n_rows, dout.shape[1]), dtype=dout.dtype)
    cols = np.arange(dout.shape[1])
    for s in range(dout.shape[0]):
        dx[arg[s], cols] += dout[s]
    return dx


# --- activations -----------------------------------------------------------

def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    # tanh form is overflow-free for any finite x
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def silu(x):
    return np.asarray(x, dtype=float) * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1 + x * (1 - s))


def batchnorm_forward(x, gamma, beta, mean=None, var=None, eps=1e-5):
    """Per-channel (axis 1) normalisation. Batch statistics when mean/var are None."""
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if mean is None:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    return gamma.reshape(shape) * xhat + beta.reshape(shape), (xhat, inv, axes, shape)


def batchnorm_backward(dout, gamma, cache, batch_stats=True):
    xhat, inv, axes, shape = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    g = (gamma * inv).reshape(shape)
    if not batch_stats:
        return dout * g, dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = g / m * (m * dout - dbeta.reshape(shape) - xhat * dgamma.reshape(shape))
    return dx, dgamma, dbeta


# --- output layer ----------------------------------------------------------

def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs, labels):
    """Batch-mean negative log-likelihood of 0-based ``labels``.

    A zero label probability is clamped to 1e-12 and reported through a
    ClampedProbability warning.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape[0] != probs.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {probs.shape[0]} rows")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ShapeError("label out of range")
    p = probs[np.arange(len(labels)), labels]
    if (p < PROB_FLOOR).any():
        warnings.warn(f"{int((p < PROB_FLOOR).sum())} label probabilities clamped", ClampedProbability)
        p = np.maximum(p, PROB_FLOOR)
    return float(-np.log(p).mean())


def softmax_cross_entropy(logits, labels):
    """Loss on raw logits plus its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    loss = float((logsum - z[np.arange(n), labels]).mean())
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def fan_in_uniform(rng, shape, fan_in, gain=math.sqrt(2.0)):
    """Uniform with variance gain²/fan_in (He scaling for ReLU-family nets)."""
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
