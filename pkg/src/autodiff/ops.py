"""
ops.py
Primitive operations with hand-written adjoints.

Only the operation set needed by the PixelCNN, decoder and classifier
architectures is provided. There is no general broadcasting; the only
implicit expansion is bias addition inside conv/linear.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from autodiff.tensor import Tensor, as_tensor, record
from utils.errors import ShapeError


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, "shape", a.shape, b.shape)


def _grad_if(tensor: Tensor, fn):
    return fn() if tensor.requires_grad else None


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return record("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = x.dtype.type(factor)
    return record("scale", (x,), x.data * factor, lambda g: (g * factor,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    return record("relu", (x,), np.where(positive, x.data, 0).astype(x.dtype), lambda g: (g * positive,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return record("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", "size", x.size, tuple(shape)) from None
    return record("reshape", (x,), data, lambda g: (g.reshape(original),))


def flatten(x) -> Tensor:
    """(N, ...) -> (N, prod(...))"""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    return record("sum", (x,), np.asarray(x.data.sum(), dtype=dtype), lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def linear(x, weight, bias=None) -> Tensor:
    """x (N, in) @ weight(out, in).T + bias(out)"""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError("linear", "ndim", 2, (x.ndim, weight.ndim))
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", "in_features", weight.shape[1], x.shape[1])
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", "bias", (weight.shape[0],), bias.shape)
        out = out + bias.data
        inputs.append(bias)

    def adjoint(g):
        grads = [_grad_if(x, lambda: g @ weight.data), _grad_if(weight, lambda: g.T @ x.data)]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return record("linear", inputs, out, adjoint)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = x.data - logsumexp(x.data, axis=axis, keepdims=True)

    def adjoint(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (x,), out, adjoint)


def channel_affine(x, gamma, beta, mean: np.ndarray, var: np.ndarray, eps: float = 1e-5) -> Tensor:
    """
    Per-channel normalization with constant statistics:
    (x - mean) / sqrt(var + eps) * gamma + beta, channels on axis 1.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    channels = x.shape[1]
    for label, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (channels,):
            raise ShapeError("channel_affine", label, (channels,), t.shape)
    view = (1, channels) + (1,) * (x.ndim - 2)
    inv = (1.0 / np.sqrt(np.asarray(var, dtype=x.dtype) + eps)).reshape(view)
    xhat = (x.data - np.asarray(mean, dtype=x.dtype).reshape(view)) * inv
    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def adjoint(g):
        return (
            _grad_if(x, lambda: g * gamma.data.reshape(view) * inv),
            (g * xhat).sum(axis=reduce_axes),
            g.sum(axis=reduce_axes),
        )

    return record("channel_affine", (x, gamma, beta), out.astype(x.dtype), adjoint)


# ---------------------------------------------------------------------------
# Likelihood terms
# ---------------------------------------------------------------------------

def bernoulli_logprob(logits, target) -> Tensor:
    """
    Sum over elements of t*log(sigmoid(l)) + (1-t)*log(1-sigmoid(l)),
    computed as t*l - softplus(l) so no exp overflows.
    """
    logits = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if t.shape != logits.shape:
        raise ShapeError("bernoulli_logprob", "shape", logits.shape, t.shape)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bernoulli_logprob: target values must be 0 or 1")
    t = t.astype(logits.dtype)
    value = np.sum(t * logits.data - np.logaddexp(0, logits.data))
    return record("bernoulli_logprob", (logits,), np.asarray(value, dtype=logits.dtype),
                  lambda g: (g * (t - expit(logits.data)),))


def categorical_logprob(logits, target, axis: int = 1) -> Tensor:
    """
    Sum of log-softmax probabilities of integer targets along `axis`.
    `target` has the logits' shape with `axis` removed.
    """
    logits = as_tensor(logits)
    levels = np.asarray(target.data if isinstance(target, Tensor) else target)
    expected = logits.shape[:axis] + logits.shape[axis + 1:]
    if levels.shape != expected:
        raise ShapeError("categorical_logprob", "shape", expected, levels.shape)
    k = logits.shape[axis]
    if not np.all((levels >= 0) & (levels < k) & (levels == np.round(levels))):
        raise ValueError(f"categorical_logprob: targets must be integers in [0, {k})")
    index = np.expand_dims(levels.astype(np.int64), axis)
    log_p = logits.data - logsumexp(logits.data, axis=axis, keepdims=True)
    value = np.take_along_axis(log_p, index, axis=axis).sum()

    def adjoint(g):
        grad = -softmax(logits.data, axis=axis)
        np.put_along_axis(grad, index, np.take_along_axis(grad, index, axis=axis) + 1, axis=axis)
        return (g * grad,)

    return record("categorical_logprob", (logits,), np.asarray(value, dtype=logits.dtype), adjoint)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def _tap_slice(start: int, count: int, stride: int) -> slice:
    return slice(start, start + stride * (count - 1) + 1, stride)


def correlate(xp: np.ndarray, w: np.ndarray, stride: int, out_hw: Tuple[int, int]) -> np.ndarray:
    """Strided cross-correlation of a pre-padded input, (N,C,Hp,Wp) * (O,C,kh,kw) -> (N,O,Ho,Wo)."""
    n = xp.shape[0]
    o, _, kh, kw = w.shape
    ho, wo = out_hw
    out = np.zeros((n, ho, wo, o), dtype=np.result_type(xp, w))
    for i in range(kh):
        for j in range(kw):
            tap = w[:, :, i, j]
            if not tap.any():
                continue
            window = xp[:, :, _tap_slice(i, ho, stride), _tap_slice(j, wo, stride)]
            out += np.tensordot(window, tap, axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def correlate_input_adjoint(g: np.ndarray, w: np.ndarray, stride: int, xp_shape) -> np.ndarray:
    """Adjoint of `correlate` with respect to its (padded) input."""
    _, _, ho, wo = g.shape
    _, c, kh, kw = w.shape
    gxp = np.zeros((g.shape[0], c) + tuple(xp_shape[2:]), dtype=np.result_type(g, w))
    g_last = g.transpose(0, 2, 3, 1)
    for i in range(kh):
        for j in range(kw):
            tap = w[:, :, i, j]
            if not tap.any():
                continue
            contrib = np.tensordot(g_last, tap, axes=([3], [0]))
            gxp[:, :, _tap_slice(i, ho, stride), _tap_slice(j, wo, stride)] += contrib.transpose(0, 3, 1, 2)
    return gxp


def correlate_weight_grad(xp: np.ndarray, g: np.ndarray, stride: int, kernel: Tuple[int, int]) -> np.ndarray:
    """Gradient of `correlate` with respect to its weight."""
    _, _, ho, wo = g.shape
    kh, kw = kernel
    gw = np.zeros((g.shape[1], xp.shape[1], kh, kw), dtype=np.result_type(xp, g))
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, _tap_slice(i, ho, stride), _tap_slice(j, wo, stride)]
            gw[:, :, i, j] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def _check_conv_args(op: str, x: Tensor, w: Tensor, in_axis: int, bias: Optional[Tensor], bias_len: int) -> None:
    if x.ndim != 4:
        raise ShapeError(op, "input ndim", 4, x.ndim)
    if w.ndim != 4:
        raise ShapeError(op, "weight ndim", 4, w.ndim)
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeError(op, "in_channels", w.shape[in_axis], x.shape[1])
    if bias is not None and bias.shape != (bias_len,):
        raise ShapeError(op, "bias", (bias_len,), bias.shape)


def conv2d(x, weight, bias=None, padding: int = 0, stride: int = 1) -> Tensor:
    """
    2-D cross-correlation with zero padding.

    Args:
        x: Input (N, C, H, W)
        weight: Kernel (O, C, kh, kw), kh and kw odd
        bias: Optional (O,)
        padding: Zero padding on every side
        stride: Step between output positions

    Returns:
        (N, O, H', W') with H' = (H + 2*padding - kh) // stride + 1
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    _check_conv_args("conv2d", x, weight, 1, bias, weight.shape[0] if weight.ndim == 4 else 0)
    kh, kw = weight.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d", "kernel", "odd extents", (kh, kw))
    if padding < 0 or stride < 1:
        raise ValueError(f"conv2d: padding must be >= 0 and stride >= 1, got {padding}, {stride}")
    n, _, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", "spatial", "kernel no larger than padded input", (h, w))
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = correlate(xp, weight.data, stride, (ho, wo))
    inputs = [x, weight]
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
        inputs.append(bias)

    def adjoint(g):
        grads = [
            _grad_if(x, lambda: correlate_input_adjoint(g, weight.data, stride, xp.shape)[:, :, padding:padding + h, padding:padding + w]),
            _grad_if(weight, lambda: correlate_weight_grad(xp, g, stride, (kh, kw))),
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("conv2d", inputs, out, adjoint)


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """
    Transposed convolution (the adjoint of a strided conv2d).

    Args:
        x: Input (N, C_in, H, W)
        weight: Kernel (C_in, C_out, kh, kw)
        bias: Optional (C_out,)
        stride: Upsampling factor
        padding: Rows/cols cropped from every side of the full output
        output_padding: Extra rows/cols kept at the bottom/right, < stride

    Returns:
        (N, C_out, (H-1)*stride + kh - 2*padding + output_padding, ...)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    _check_conv_args("conv_transpose2d", x, weight, 0, bias, weight.shape[1] if weight.ndim == 4 else 0)
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ValueError(f"conv_transpose2d: output_padding must be < stride, got {output_padding}")
    n, _, h, w = x.shape
    kh, kw = weight.shape[2:]
    full_h = (h - 1) * stride + kh + output_padding
    full_w = (w - 1) * stride + kw + output_padding
    if padding < 0 or 2 * padding >= min(full_h, full_w):
        raise ValueError(f"conv_transpose2d: padding {padding} leaves no output")
    full_shape = (n, weight.shape[1], full_h, full_w)
    crop = (slice(None), slice(None), slice(padding, full_h - padding), slice(padding, full_w - padding))
    out = correlate_input_adjoint(x.data, weight.data, stride, full_shape)[crop]
    inputs = [x, weight]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
        inputs.append(bias)

    def adjoint(g):
        g_full = np.zeros(full_shape, dtype=g.dtype)
        g_full[crop] = g
        grads = [
            _grad_if(x, lambda: correlate(g_full, weight.data, stride, (h, w))),
            _grad_if(weight, lambda: correlate_weight_grad(g_full, x.data, stride, (kh, kw))),
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("conv_transpose2d", inputs, np.ascontiguousarray(out), adjoint)
