# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col/col2im and max-pool kernels.

Every routine writes into caller-allocated, C-contiguous buffers. Signatures
mirror ``_kernels_py`` exactly so the two backends are interchangeable.
"""

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, ::1] x, real[:, :, ::1] cols,
           int kh, int kw, int sh, int sw, int ph, int pw, int rate,
           int oh, int ow):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, ix, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ch * kh + ki) * kw + kj
                        for oy in range(oh):
                            iy = oy * sh - ph + ki * rate
                            col = oy * ow
                            if iy < 0 or iy >= h:
                                for ox in range(ow):
                                    cols[b, row, col + ox] = 0
                                continue
                            for ox in range(ow):
                                ix = ox * sw - pw + kj * rate
                                if ix < 0 or ix >= w:
                                    cols[b, row, col + ox] = 0
                                else:
                                    cols[b, row, col + ox] = x[b, ch, iy, ix]


def col2im(const real[:, :, ::1] cols, real[:, :, :, ::1] out,
           int kh, int kw, int sh, int sw, int ph, int pw, int rate,
           int oh, int ow):
    """Scatter-add ``cols`` back onto ``out``; ``out`` must be zeroed."""
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ch * kh + ki) * kw + kj
                        for oy in range(oh):
                            iy = oy * sh - ph + ki * rate
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * sw - pw + kj * rate
                                if 0 <= ix < w:
                                    out[b, ch, iy, ix] += cols[b, row, oy * ow + ox]


def maxpool_forward(const real[:, :, :, ::1] x, real[:, :, :, ::1] out,
                    long long[:, :, :, ::1] argmax, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], w = x.shape[3]
    cdef Py_ssize_t oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t b, ch, oy, ox, ki, kj, iy, ix, best_idx
    cdef real best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        iy = oy * sh
                        ix = ox * sw
                        best = x[b, ch, iy, ix]
                        best_idx = iy * w + ix
                        for ki in range(kh):
                            for kj in range(kw):
                                v = x[b, ch, iy + ki, ix + kj]
                                # strict '>' keeps the first winner in row-major order
                                if v > best:
                                    best = v
                                    best_idx = (iy + ki) * w + ix + kj
                        out[b, ch, oy, ox] = best
                        argmax[b, ch, oy, ox] = best_idx


def maxpool_backward(const real[:, :, :, ::1] grad_out, const long long[:, :, :, ::1] argmax,
                     real[:, :, :, ::1] grad_in):
    cdef Py_ssize_t n = grad_out.shape[0], c = grad_out.shape[1]
    cdef Py_ssize_t oh = grad_out.shape[2], ow = grad_out.shape[3], w = grad_in.shape[3]
    cdef Py_ssize_t b, ch, oy, ox, idx
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        idx = argmax[b, ch, oy, ox]
                        grad_in[b, ch, idx // w, idx % w] += grad_out[b, ch, oy, ox]
