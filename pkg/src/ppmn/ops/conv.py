"""Atrous (dilated) 2-D convolution: fast im2col path and a naive reference.

Convolution is cross-correlation (no kernel flip). A kernel of extent ``k`` at
rate ``r`` covers ``k + (k - 1)(r - 1)`` input samples per axis.
"""
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from . import backend as _backend
from .tensor import as_tensor, check_4d


def _pair(v):
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    rate: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if min(self.kernel) < 1 or min(self.stride) < 1 or self.rate < 1 or self.out_channels < 1:
            raise ShapeError(f"invalid conv spec {self}: extents, strides and rate must be >= 1")
        if min(self.padding) < 0:
            raise ShapeError(f"invalid conv spec {self}: negative padding")

    @property
    def effective_kernel(self):
        """Field-of-view per axis of the dilated kernel."""
        r = self.rate
        return tuple(k + (k - 1) * (r - 1) for k in self.kernel)

    def output_size(self, h, w):
        ekh, ekw = self.effective_kernel
        (sh, sw), (ph, pw) = self.stride, self.padding
        return ((h + 2 * ph - ekh) // sh + 1, (w + 2 * pw - ekw) // sw + 1)


def same_padding(kernel, rate):
    """Padding that keeps the spatial extent of a stride-1 atrous conv (odd kernels)."""
    return tuple(rate * (k - 1) // 2 for k in _pair(kernel))


def _validate(x, weights, bias, spec):
    check_4d(x, "input")
    check_4d(weights, "weights")
    oc, ic, kh, kw = weights.shape
    if x.shape[1] != ic:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but weights shape {weights.shape} expect {ic}"
        )
    if (kh, kw) != spec.kernel or oc != spec.out_channels:
        raise ShapeError(f"weights shape {weights.shape} disagree with {spec}")
    if bias is not None and np.shape(bias) != (oc,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match {oc} output channels")
    oh, ow = spec.output_size(*x.shape[2:])
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"input shape {x.shape} with padding {spec.padding} is too small for effective kernel "
            f"{spec.effective_kernel} (weights shape {weights.shape}): zero-sized output"
        )
    return oh, ow


def _is_pointwise(spec):
    return spec.kernel == (1, 1) and spec.stride == (1, 1) and spec.padding == (0, 0)


def im2col(x, spec, kernels=None):
    """Lower ``x`` to a patch matrix of shape (n, c*kh*kw, oh*ow)."""
    k = kernels or _backend.kernels
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    oh, ow = spec.output_size(h, w)
    if _is_pointwise(spec):
        return x.reshape(n, c, h * w)
    kh, kw = spec.kernel
    cols = np.empty((n, c * kh * kw, oh * ow), dtype=x.dtype)
    k.im2col(x, cols, kh, kw, *spec.stride, *spec.padding, spec.rate, oh, ow)
    return cols


def col2im(cols, input_shape, spec, kernels=None):
    k = kernels or _backend.kernels
    n, c, h, w = input_shape
    if _is_pointwise(spec):
        return cols.reshape(input_shape).copy()
    oh, ow = spec.output_size(h, w)
    out = np.zeros(input_shape, dtype=cols.dtype)
    k.col2im(np.ascontiguousarray(cols), out, *spec.kernel, *spec.stride, *spec.padding, spec.rate, oh, ow)
    return out


def conv2d_forward(x, weights, bias, spec, kernels=None, return_cols=False):
    """Atrous cross-correlation of ``x`` (n, c, h, w) with ``weights`` (oc, c, kh, kw)."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)
    oh, ow = _validate(x, weights, bias, spec)
    n = x.shape[0]
    oc = weights.shape[0]
    cols = im2col(x, spec, kernels)
    out = np.matmul(weights.reshape(oc, -1), cols)
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)[None, :, None]
    out = out.reshape(n, oc, oh, ow)
    if return_cols:
        return out, cols
    return out


def conv2d_backward(x, weights, spec, grad_out, kernels=None, cols=None):
    """Adjoint of :func:`conv2d_forward`; returns (grad_input, grad_weights, grad_bias)."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)
    oh, ow = _validate(x, weights, None, spec)
    n = x.shape[0]
    oc = weights.shape[0]
    if grad_out.shape != (n, oc, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {(n, oc, oh, ow)}")
    g = np.asarray(grad_out, dtype=x.dtype).reshape(n, oc, oh * ow)
    if cols is None:
        cols = im2col(x, spec, kernels)
    grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weights.shape)
    grad_b = g.sum(axis=(0, 2))
    grad_cols = np.matmul(weights.reshape(oc, -1).T, g)
    grad_x = col2im(grad_cols, x.shape, spec, kernels)
    return grad_x, grad_w, grad_b


def dilate_kernel(weights, rate):
    """Insert ``rate - 1`` zeros between consecutive taps along both spatial axes."""
    weights = np.asarray(weights)
    check_4d(weights, "weights")
    if rate < 1:
        raise ShapeError(f"rate must be >= 1, got {rate}")
    if rate == 1:
        return weights.copy()
    oc, ic, kh, kw = weights.shape
    out = np.zeros((oc, ic, kh + (kh - 1) * (rate - 1), kw + (kw - 1) * (rate - 1)), dtype=weights.dtype)
    out[:, :, ::rate, ::rate] = weights
    return out


def conv2d_reference(x, weights, bias, spec):
    """Direct definition: one float64 dot product per output element.

    Deliberately unoptimized; it is the oracle the fast path is tested against.
    """
    x = as_tensor(x)
    weights = np.asarray(weights)
    oh, ow = _validate(x, weights, bias, spec)
    n = x.shape[0]
    oc, ic, kh, kw = weights.shape
    (sh, sw), (ph, pw), r = spec.stride, spec.padding, spec.rate
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    w64 = weights.astype(np.float64)
    b64 = np.zeros(oc) if bias is None else np.asarray(bias, dtype=np.float64)
    out = np.empty((n, oc, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(oc):
            for oy in range(oh):
                for ox in range(ow):
                    y0, x0 = oy * sh, ox * sw
                    patch = xp[b, :, y0:y0 + r * (kh - 1) + 1:r, x0:x0 + r * (kw - 1) + 1:r]
                    out[b, o, oy, ox] = float(np.sum(patch * w64[o])) + b64[o]
    return out.astype(x.dtype)
