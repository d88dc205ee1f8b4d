"""Elementwise, fully-connected, concatenation and pair-softmax layers."""
import numpy as np

from ..errors import ShapeError
from .tensor import as_tensor


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    """Gradient of relu at ``x``; the kink at 0 takes the zero subgradient."""
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def fc_forward(x, weights, bias):
    """Flatten (n, c, h, w) to (n, c*h*w) and apply ``weights`` (out, in); returns (n, out, 1, 1)."""
    x = as_tensor(x)
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if weights.ndim != 2 or weights.shape[1] != flat.shape[1]:
        raise ShapeError(
            f"fc weights shape {weights.shape} incompatible with input shape {x.shape} "
            f"({flat.shape[1]} features)"
        )
    out = flat @ weights.astype(x.dtype, copy=False).T + bias.astype(x.dtype, copy=False)
    return out.reshape(n, weights.shape[0], 1, 1)


def fc_backward(x, weights, grad_out):
    n = x.shape[0]
    flat = x.reshape(n, -1)
    g = grad_out.reshape(n, weights.shape[0])
    grad_x = (g @ weights).reshape(x.shape)
    return grad_x, g.T @ flat, g.sum(axis=0)


def concat_channels(*tensors):
    """Stack tensors along channels in argument order; (n, h, w) must agree."""
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"cannot concatenate shapes {ref} and {t.shape}: (n, h, w) differ")
    return np.concatenate(tensors, axis=1)


def concat_backward(grad_out, channels):
    """Split ``grad_out`` back into per-input gradients given each input's channel count."""
    cuts = np.cumsum(channels)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad_out, cuts, axis=1)]


def softmax_pair_forward(logits):
    """Two-unit softmax over the channel axis of (n, 2, 1, 1) logits, max-subtracted."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_pair_backward(probs, grad_out):
    inner = (grad_out * probs).sum(axis=1, keepdims=True)
    return probs * (grad_out - inner)
