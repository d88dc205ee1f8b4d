"""Pure-numpy implementations of the compiled kernels in ``_kernels.pyx``.

Same signatures, same in-place output contract. Used when the extension is
not built or when ``PPMN_PURE_PYTHON=1``.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def _padded(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def im2col(x, cols, kh, kw, sh, sw, ph, pw, rate, oh, ow):
    n, c = x.shape[:2]
    xp = _padded(x, ph, pw)
    s_n, s_c, s_h, s_w = xp.strides
    # windows[b, ch, ki, kj, oy, ox] = xp[b, ch, oy*sh + ki*rate, ox*sw + kj*rate]
    windows = as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s_n, s_c, rate * s_h, rate * s_w, sh * s_h, sw * s_w),
        writeable=False,
    )
    cols[...] = windows.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, out, kh, kw, sh, sw, ph, pw, rate, oh, ow):
    n, c, h, w = out.shape
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=out.dtype)
    blocks = cols.reshape(n, c, kh, kw, oh, ow)
    for ki in range(kh):
        y0 = ki * rate
        for kj in range(kw):
            x0 = kj * rate
            xp[:, :, y0:y0 + sh * (oh - 1) + 1:sh, x0:x0 + sw * (ow - 1) + 1:sw] += blocks[:, :, ki, kj]
    out += xp[:, :, ph:ph + h, pw:pw + w]


def maxpool_forward(x, out, argmax, kh, kw, sh, sw):
    n, c, h, w = x.shape
    oh, ow = out.shape[2:]
    s_n, s_c, s_h, s_w = x.strides
    windows = as_strided(
        x,
        shape=(n, c, oh, ow, kh, kw),
        strides=(s_n, s_c, sh * s_h, sw * s_w, s_h, s_w),
        writeable=False,
    ).reshape(n, c, oh, ow, kh * kw)
    local = windows.argmax(axis=-1)  # first occurrence on ties
    out[...] = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    ky, kx = np.divmod(local, kw)
    iy = np.arange(oh)[:, None] * sh + ky
    ix = np.arange(ow)[None, :] * sw + kx
    argmax[...] = iy * w + ix


def maxpool_backward(grad_out, argmax, grad_in):
    n, c, h, w = grad_in.shape
    flat = grad_in.reshape(n * c, h * w)
    idx = argmax.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), idx.shape[1])
    np.add.at(flat, (rows, idx.ravel()), grad_out.reshape(n * c, -1).ravel())
