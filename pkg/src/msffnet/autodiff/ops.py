"""Differentiable ops over :class:`Tensor`.

All ops are pure: they never modify input arrays. Image tensors are N x C x H x W.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, default_dtype, record

# elements per im2col buffer before a conv is split into row chunks
COL_BUDGET = 1 << 24


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=default_dtype()))


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == 4 and b.ndim == 4 and sa[:2] == sb[:2]:
        if sa[2:] == (1, 1) or sb[2:] == (1, 1):
            return
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------- elementwise

def add(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _check_broadcast("add", x, y)
    sx, sy = x.shape, y.shape

    def back(g):
        return _reduce_to(g, sx), _reduce_to(g, sy)

    return record("add", x.data + y.data, (x, y), back)


def sub(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _check_broadcast("sub", x, y)
    sx, sy = x.shape, y.shape

    def back(g):
        return _reduce_to(g, sx), _reduce_to(-g, sy)

    return record("sub", x.data - y.data, (x, y), back)


def mul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _check_broadcast("mul", x, y)
    xd, yd = x.data, y.data

    def back(g):
        gx = _reduce_to(g * yd, xd.shape) if x.requires_grad else None
        gy = _reduce_to(g * xd, yd.shape) if y.requires_grad else None
        return gx, gy

    return record("mul", xd * yd, (x, y), back)


def scale_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """Multiply an N x C x H x W map by per-channel scales of shape N x C x 1 x 1."""
    if s.ndim != 4 or s.shape[2:] != (1, 1) or s.shape[:2] != x.shape[:2]:
        raise ValueError(f"scale_broadcast: scales {s.shape} do not match map {x.shape}")
    return mul(x, s)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    xd = x.data
    return record("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is overflow-free for large |x|
    y = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    return record("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def log1p(x: Tensor) -> Tensor:
    xd = x.data
    return record("log1p", np.log1p(xd), (x,), lambda g: (g / (1 + xd),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient passes on the closed interval."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return record("clamp", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return record("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                  lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return record("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                  lambda g: (np.broadcast_to(g / n, shape),))


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return record("global_avg_pool", out, (x,),
                  lambda g: (np.broadcast_to(g / (h * w), (n, c, h, w)),))


# ------------------------------------------------------------------ structure

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: shape {t.shape} does not match {ref}")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def back(g):
        return np.split(g, splits, axis=1)

    return record("concat_channels", np.concatenate([t.data for t in xs], axis=1), xs, back)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return record("slice_channels", x.data[:, start:stop].copy(), (x,), back)


def concat_batch(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    splits = np.cumsum([t.shape[0] for t in xs])[:-1]
    return record("concat_batch", np.concatenate([t.data for t in xs], axis=0), xs,
                  lambda g: np.split(g, splits, axis=0))


def slice_batch(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return record("slice_batch", x.data[start:stop].copy(), (x,), back)


# ---------------------------------------------------------------- convolution

def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, r0: int, r1: int, wo: int) -> np.ndarray:
    """Columns laid out (C*k*k, N*rows*Wo) so the copy walks contiguous image rows."""
    n, c = xp.shape[:2]
    rows = xp[:, :, r0 * stride:(r1 - 1) * stride + k]
    win = sliding_window_view(rows, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :, :wo]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * (r1 - r0) * wo)


def _row_chunks(n: int, ho: int, wo: int, depth: int) -> list[tuple[int, int]]:
    rows_per = max(1, min(ho, COL_BUDGET // max(1, n * wo * depth)))
    return [(r, min(ho, r + rows_per)) for r in range(0, ho, rows_per)]


def _correlate(xp: np.ndarray, wm: np.ndarray, k: int, stride: int, ho: int, wo: int,
               bias: np.ndarray | None = None, keep_cols: bool = False):
    """Raw forward pass on a padded array; returns (out, cols or None, chunks)."""
    n, c = xp.shape[:2]
    oc = wm.shape[0]
    chunks = _row_chunks(n, ho, wo, c * k * k)
    out = np.empty((n, oc, ho, wo), dtype=xp.dtype)
    saved = None
    for r0, r1 in chunks:
        cols = _im2col(xp, k, stride, r0, r1, wo)
        res = wm @ cols
        if bias is not None:
            res += bias[:, None]
        out[:, :, r0:r1] = res.reshape(oc, n, r1 - r0, wo).transpose(1, 0, 2, 3)
        if keep_cols and len(chunks) == 1:
            saved = cols
    return out, saved, chunks


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col + GEMM, chunked over output rows."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    oc, ic, k, k2 = weight.shape
    if ic != c or k != k2:
        raise ValueError(f"conv2d: input shape {x.shape} incompatible with weight shape {weight.shape}")
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {k} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wm = weight.data.reshape(oc, c * k * k)
    track = weight.requires_grad
    out, saved, chunks = _correlate(xp, wm, k, stride, ho, wo,
                                    None if bias is None else bias.data, keep_cols=track)

    def back(g):
        gw = gb = gx = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if weight.requires_grad:
            gw = np.zeros_like(wm)
            for r0, r1 in chunks:
                cols = saved if saved is not None else _im2col(xp, k, stride, r0, r1, wo)
                gw += g[:, :, r0:r1].transpose(1, 0, 2, 3).reshape(oc, -1) @ cols.T
            gw = gw.reshape(weight.shape)
        if x.requires_grad:
            gx = _conv_input_grad(g, weight.data, xp.shape, stride, padding, h, w)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv2d", out, inputs, back)


def _conv_input_grad(g: np.ndarray, wt: np.ndarray, xp_shape, stride: int, padding: int,
                     h: int, w: int) -> np.ndarray:
    oc, c, k, _ = wt.shape
    if stride == 1 and padding <= k - 1:
        # correlation of the zero-padded output gradient with the flipped, transposed kernel
        q = k - 1 - padding
        gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
        wf = wt[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, oc * k * k)
        gx, _, _ = _correlate(np.ascontiguousarray(gp), np.ascontiguousarray(wf), k, 1, h, w)
        return gx
    n, _, ho, wo = g.shape
    wm = wt.reshape(oc, c * k * k)
    gxp = np.zeros(xp_shape, dtype=g.dtype)
    for r0, r1 in _row_chunks(n, ho, wo, c * k * k):
        g2 = g[:, :, r0:r1].transpose(1, 0, 2, 3).reshape(oc, -1)
        gcols = (wm.T @ g2).reshape(c, k, k, n, r1 - r0, wo)
        base = r0 * stride
        for i in range(k):
            for j in range(k):
                gxp[:, :, base + i:base + i + (r1 - r0 - 1) * stride + 1:stride,
                    j:j + (wo - 1) * stride + 1:stride] += gcols[:, i, j].transpose(1, 0, 2, 3)
    return gxp[:, :, padding:padding + h, padding:padding + w]


# -------------------------------------------------------------- interpolation

def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Rows hold linear-interpolation weights; half-pixel (align_corners=False) mapping."""
    a = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        a[o, i0] += 1 - frac
        a[o, i1] += frac
    return a


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    n, c, h, w = x.shape
    ah = interp_matrix(h, size[0], x.dtype)
    aw = interp_matrix(w, size[1], x.dtype)
    out = ah @ x.data @ aw.T
    return record("bilinear_upsample", out, (x,), lambda g: (ah.T @ g @ aw,))


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    return resize_bilinear(x, (x.shape[2] * factor, x.shape[3] * factor))


def warp_bilinear(feat: Tensor, flow: Tensor) -> Tensor:
    """Sample ``feat`` at p + flow(p) with bilinear weights and replicate-edge clamping.

    ``flow`` channel 0 is dx (columns), channel 1 is dy (rows), both in pixels.
    The flow gradient uses the right-continuous derivative at integer positions.
    """
    n, c, h, w = feat.shape
    if flow.ndim != 4 or flow.shape[1] != 2 or flow.shape[0] != n or flow.shape[2:] != (h, w):
        raise ValueError(f"warp_bilinear: flow {flow.shape} does not match features {feat.shape}")
    dt = feat.dtype
    ys, xs = np.meshgrid(np.arange(h, dtype=dt), np.arange(w, dtype=dt), indexing="ij")
    vx = xs + flow.data[:, 0]
    vy = ys + flow.data[:, 1]
    sx = np.clip(vx, 0, w - 1)
    sy = np.clip(vy, 0, h - 1)
    x0 = np.minimum(np.floor(sx), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(sy), max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (sx - x0).astype(dt).reshape(n, 1, -1)
    ay = (sy - y0).astype(dt).reshape(n, 1, -1)
    idx = [(y0 * w + x0), (y0 * w + x1), (y1 * w + x0), (y1 * w + x1)]
    idx = [i.reshape(n, 1, -1) for i in idx]
    f = feat.data.reshape(n, c, h * w)
    v00, v01, v10, v11 = (np.take_along_axis(f, i, axis=2) for i in idx)
    wts = [(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay]
    out = wts[0] * v00 + wts[1] * v01 + wts[2] * v10 + wts[3] * v11
    mask_x = ((vx >= 0) & (vx < w - 1)).reshape(n, 1, -1)
    mask_y = ((vy >= 0) & (vy < h - 1)).reshape(n, 1, -1)

    def back(g):
        g = g.reshape(n, c, h * w)
        gfeat = gflow = None
        if feat.requires_grad:
            base = (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1)
            flat_idx = np.concatenate([(base + i).ravel() for i in idx])
            vals = np.concatenate([(g * wt).ravel() for wt in wts])
            gfeat = np.bincount(flat_idx, weights=vals, minlength=n * c * h * w)
            gfeat = gfeat.astype(dt).reshape(n, c, h, w)
        if flow.requires_grad:
            dx = ((1 - ay) * (v01 - v00) + ay * (v11 - v10)) * mask_x
            dy = ((1 - ax) * (v10 - v00) + ax * (v11 - v01)) * mask_y
            gflow = np.stack([(g * dx).sum(axis=1), (g * dy).sum(axis=1)], axis=1)
            gflow = gflow.reshape(n, 2, h, w).astype(dt)
        return gfeat, gflow

    return record("warp_bilinear", out.reshape(n, c, h, w), (feat, flow), back)
