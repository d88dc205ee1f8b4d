"""Dense numerical kernels with forward/backward passes and reference oracles."""
from .backend import BACKEND, available_backends, get_backend
from .conv import (
    ConvSpec,
    col2im,
    conv2d_backward,
    conv2d_forward,
    conv2d_reference,
    dilate_kernel,
    im2col,
    same_padding,
)
from .dense import (
    concat_backward,
    concat_channels,
    fc_backward,
    fc_forward,
    relu_backward,
    relu_forward,
    softmax_pair_backward,
    softmax_pair_forward,
)
from .pool import PoolIndex, maxpool_backward, maxpool_forward
from .tensor import DTYPE, as_tensor

__all__ = [
    "BACKEND",
    "DTYPE",
    "ConvSpec",
    "PoolIndex",
    "as_tensor",
    "available_backends",
    "col2im",
    "concat_backward",
    "concat_channels",
    "conv2d_backward",
    "conv2d_forward",
    "conv2d_reference",
    "dilate_kernel",
    "fc_backward",
    "fc_forward",
    "get_backend",
    "im2col",
    "maxpool_backward",
    "maxpool_forward",
    "relu_backward",
    "relu_forward",
    "same_padding",
    "softmax_pair_backward",
    "softmax_pair_forward",
]
