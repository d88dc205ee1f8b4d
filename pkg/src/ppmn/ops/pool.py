"""Max pooling (no padding, floor mode) with an explicit argmax map."""
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from . import backend as _backend
from .tensor import as_tensor


@dataclass(frozen=True)
class PoolIndex:
    """Winner positions (flat ``y * w + x`` within each plane) and the input shape."""

    indices: np.ndarray
    input_shape: tuple


def maxpool_forward(x, window=(2, 2), stride=(2, 2), kernels=None):
    """Return (pooled, PoolIndex). Ties resolve to the first element in row-major order."""
    k = kernels or _backend.kernels
    x = as_tensor(x)
    n, c, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise ShapeError(f"pool window {window} and stride {stride} must be >= 1")
    if kh > h or kw > w:
        raise ShapeError(f"pool window {window} larger than input shape {x.shape}")
    oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    argmax = np.empty((n, c, oh, ow), dtype=np.int64)
    k.maxpool_forward(x, out, argmax, kh, kw, sh, sw)
    return out, PoolIndex(argmax, x.shape)


def maxpool_backward(index, grad_out, kernels=None):
    """Route each gradient entry to its window's winner; zeros elsewhere."""
    k = kernels or _backend.kernels
    if grad_out.shape != index.indices.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {index.indices.shape}")
    grad_out = np.ascontiguousarray(grad_out)
    grad_in = np.zeros(index.input_shape, dtype=grad_out.dtype)
    k.maxpool_backward(grad_out, index.indices, grad_in)
    return grad_in
