"""Hot numeric kernels: bilinear resize, im2col, and pooling.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The active path is chosen at import time: numpy when the environment
variable ``SCOUTCV_NUMBA=0`` is set or numba is unavailable, numba
otherwise. ``benchmarks/kernel_bench.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_WANT_NUMBA = os.environ.get("SCOUTCV_NUMBA", "1") != "0"

if _WANT_NUMBA:
    try:
        from numba import njit

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False
else:
    USING_NUMBA = False

if not USING_NUMBA:

    def njit(*args, **kwargs):  # type: ignore[misc]
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# bilinear resize (HWC, align-corners: the four image corners map exactly)


@njit(cache=True)
def _resize_bilinear_jit(img, out_h, out_w):
    in_h, in_w, ch = img.shape
    out = np.empty((out_h, out_w, ch), dtype=img.dtype)
    sy = (in_h - 1) / (out_h - 1) if out_h > 1 else 0.0
    sx = (in_w - 1) / (out_w - 1) if out_w > 1 else 0.0
    for oy in range(out_h):
        fy = oy * sy
        y0 = int(fy)
        y1 = min(y0 + 1, in_h - 1)
        wy = fy - y0
        for ox in range(out_w):
            fx = ox * sx
            x0 = int(fx)
            x1 = min(x0 + 1, in_w - 1)
            wx = fx - x0
            for c in range(ch):
                top = img[y0, x0, c] * (1.0 - wx) + img[y0, x1, c] * wx
                bot = img[y1, x0, c] * (1.0 - wx) + img[y1, x1, c] * wx
                out[oy, ox, c] = top * (1.0 - wy) + bot * wy
    return out


def _resize_bilinear_np(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w, _ = img.shape
    sy = (in_h - 1) / (out_h - 1) if out_h > 1 else 0.0
    sx = (in_w - 1) / (out_w - 1) if out_w > 1 else 0.0
    fy = np.arange(out_h) * sy
    fx = np.arange(out_w) * sx
    y0 = fy.astype(np.int64)
    x0 = fx.astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (fy - y0)[:, None, None]
    wx = (fx - x0)[None, :, None]
    top = img[y0][:, x0] * (1.0 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1.0 - wx) + img[y1][:, x1] * wx
    return (top * (1.0 - wy) + bot * wy).astype(img.dtype, copy=False)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an H x W x C array with corner-aligned bilinear sampling."""
    if USING_NUMBA:
        return _resize_bilinear_jit(np.ascontiguousarray(img), out_h, out_w)
    return _resize_bilinear_np(img, out_h, out_w)


# ---------------------------------------------------------------------------
# im2col for CHW convolution. Row layout: c * kh * kw, column layout: oh * ow.
# pads follow the (top, left, bottom, right) convention.


@njit(cache=True)
def _im2col_jit(x, kh, kw, sh, sw, pt, pl, oh, ow):
    c, h, w = x.shape
    cols = np.zeros((c * kh * kw, oh * ow), dtype=x.dtype)
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ci * kh + ki) * kw + kj
                for oy in range(oh):
                    iy = oy * sh + ki - pt
                    if iy < 0 or iy >= h:
                        continue
                    for ox in range(ow):
                        ix = ox * sw + kj - pl
                        if 0 <= ix < w:
                            cols[row, oy * ow + ox] = x[ci, iy, ix]
    return cols


def _im2col_np(x, kh, kw, sh, sw, pt, pl, pb, pr, oh, ow):
    padded = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    win = win[:, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        x.shape[0] * kh * kw, oh * ow
    )


def _out_size(size: int, k: int, s: int, p0: int, p1: int) -> int:
    return (size + p0 + p1 - k) // s + 1


def im2col(
    x: np.ndarray,
    kernel: tuple[int, int],
    strides: tuple[int, int],
    pads: tuple[int, int, int, int],
) -> tuple[np.ndarray, int, int]:
    """Unfold a C x H x W array into convolution columns.

    Returns (columns, out_h, out_w) where columns has shape
    (C * kh * kw, out_h * out_w).
    """
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    _, h, w = x.shape
    oh = _out_size(h, kh, sh, pt, pb)
    ow = _out_size(w, kw, sw, pl, pr)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"kernel {kernel} does not fit input {x.shape} with pads {pads}")
    if USING_NUMBA:
        return _im2col_jit(np.ascontiguousarray(x), kh, kw, sh, sw, pt, pl, oh, ow), oh, ow
    return _im2col_np(x, kh, kw, sh, sw, pt, pl, pb, pr, oh, ow), oh, ow


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None,
    strides: tuple[int, int],
    pads: tuple[int, int, int, int],
    groups: int = 1,
) -> np.ndarray:
    """2-D convolution on a C x H x W array.

    weight is (M, C // groups, kh, kw); returns (M, out_h, out_w). The
    patch gather is the hot kernel; the contraction stays on BLAS.
    """
    m, cg, kh, kw = weight.shape
    c = x.shape[0]
    if c != cg * groups:
        raise ValueError(f"conv weight expects {cg * groups} input channels, got {c}")
    mg = m // groups
    outs = []
    for g in range(groups):
        xg = x[g * cg : (g + 1) * cg]
        cols, oh, ow = im2col(xg, (kh, kw), strides, pads)
        wg = weight[g * mg : (g + 1) * mg].reshape(mg, cg * kh * kw)
        outs.append(wg @ cols)
    out = np.concatenate(outs, axis=0).reshape(m, oh, ow)
    if bias is not None:
        out += bias[:, None, None]
    return out


# ---------------------------------------------------------------------------
# pooling


@njit(cache=True)
def _maxpool_jit(x, kh, kw, sh, sw, pt, pl, oh, ow):
    c, h, w = x.shape
    out = np.empty((c, oh, ow), dtype=x.dtype)
    for ci in range(c):
        for oy in range(oh):
            for ox in range(ow):
                best = -np.inf
                for ki in range(kh):
                    iy = oy * sh + ki - pt
                    if iy < 0 or iy >= h:
                        continue
                    for kj in range(kw):
                        ix = ox * sw + kj - pl
                        if 0 <= ix < w and x[ci, iy, ix] > best:
                            best = x[ci, iy, ix]
                out[ci, oy, ox] = best
    return out


@njit(cache=True)
def _avgpool_jit(x, kh, kw, sh, sw, pt, pl, oh, ow):
    c, h, w = x.shape
    out = np.empty((c, oh, ow), dtype=x.dtype)
    for ci in range(c):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                cnt = 0
                for ki in range(kh):
                    iy = oy * sh + ki - pt
                    if iy < 0 or iy >= h:
                        continue
                    for kj in range(kw):
                        ix = ox * sw + kj - pl
                        if 0 <= ix < w:
                            acc += x[ci, iy, ix]
                            cnt += 1
                out[ci, oy, ox] = acc / cnt
    return out


def _pool_np(x, kernel, strides, pads, mode):
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    c, h, w = x.shape
    oh = _out_size(h, kh, sh, pt, pb)
    ow = _out_size(w, kw, sw, pl, pr)
    if mode == "max":
        padded = np.pad(x, ((0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    else:
        padded = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :oh, :ow]
    if mode == "max":
        return win.max(axis=(3, 4))
    # average excludes padded cells, matching the jit kernel
    ones = np.pad(np.ones((1, h, w), dtype=x.dtype), ((0, 0), (pt, pb), (pl, pr)))
    counts = sliding_window_view(ones, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :oh, :ow]
    return win.sum(axis=(3, 4)) / counts.sum(axis=(3, 4))


def maxpool2d(x, kernel, strides, pads) -> np.ndarray:
    """Max pooling over a C x H x W array; padding never wins the max."""
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    if USING_NUMBA:
        _, h, w = x.shape
        oh = _out_size(h, kh, sh, pt, pb)
        ow = _out_size(w, kw, sw, pl, pr)
        return _maxpool_jit(np.ascontiguousarray(x), kh, kw, sh, sw, pt, pl, oh, ow)
    return _pool_np(x, kernel, strides, pads, "max")


def avgpool2d(x, kernel, strides, pads) -> np.ndarray:
    """Average pooling; padded cells are excluded from the divisor."""
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    if USING_NUMBA:
        _, h, w = x.shape
        oh = _out_size(h, kh, sh, pt, pb)
        ow = _out_size(w, kw, sw, pl, pr)
        return _avgpool_jit(np.ascontiguousarray(x), kh, kw, sh, sw, pt, pl, oh, ow)
    return _pool_np(x, kernel, strides, pads, "avg")
