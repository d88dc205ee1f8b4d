"""Tensor conventions: plain C-contiguous numpy arrays shaped (n, c, h, w)."""
import numpy as np

from ..errors import ShapeError

DTYPE = np.float32


def as_tensor(x, dtype=None):
    """Return ``x`` as a 4-D floating array; float32 unless it is already float64."""
    x = np.asarray(x)
    if dtype is None:
        dtype = x.dtype if x.dtype in (np.float32, np.float64) else DTYPE
    x = np.ascontiguousarray(x, dtype=dtype)
    check_4d(x, "tensor")
    return x


def check_4d(x, what):
    if np.ndim(x) != 4:
        raise ShapeError(f"{what} must be 4-D (n, c, h, w), got shape {np.shape(x)}")
