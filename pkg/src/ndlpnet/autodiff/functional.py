"""Differentiable operator set: elementwise math, convolutions, reshapes.

Every op validates shapes up front, computes its forward value, and -- when a
tape is active and an input requires gradients -- pushes a pull closure that
routes ``out.grad`` back to the inputs.  Ops are pure functions of their
inputs.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, accumulate, push, recording

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtypes {a.dtype} and {b.dtype} differ")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    if recording((a, b)):
        def pull():
            g = out.grad
            if a.requires_grad:
                accumulate(a, g)
            if b.requires_grad:
                accumulate(b, g)
        push(out, pull)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    if recording((a, b)):
        def pull():
            g = out.grad
            if a.requires_grad:
                accumulate(a, g)
            if b.requires_grad:
                accumulate(b, -g)
        push(out, pull)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of equal-shape tensors."""
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    if recording((a, b)):
        def pull():
            g = out.grad
            if a.requires_grad:
                accumulate(a, g * b.data)
            if b.requires_grad:
                accumulate(b, g * a.data)
        push(out, pull)
    return out


def scale(x: Tensor, s) -> Tensor:
    """Multiply by a scalar: a Python number or a one-element tensor.

    The one-element form keeps the scalar learnable (attention temperatures).
    """
    if isinstance(s, Tensor):
        if s.size != 1:
            raise ShapeError(f"scale: scalar tensor required, got shape {s.shape}")
        out = Tensor(x.data * s.data.reshape(-1)[0])
        if recording((x, s)):
            def pull():
                g = out.grad
                if x.requires_grad:
                    accumulate(x, g * s.data.reshape(-1)[0])
                if s.requires_grad:
                    accumulate(s, np.sum(g * x.data).astype(s.dtype).reshape(s.shape))
            push(out, pull)
        return out
    f = float(s)
    out = Tensor(x.data * f)
    if recording((x,)):
        def pull():
            if x.requires_grad:
                accumulate(x, out.grad * f)
        push(out, pull)
    return out


def scale_channels(x: Tensor, v: Tensor) -> Tensor:
    """Explicit per-channel broadcast: ``y[c] = x[c] * v[c]`` over C x H x W."""
    if x.ndim != 3 or v.ndim != 1 or v.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_channels: got map {x.shape} and vector {v.shape}")
    out = Tensor(x.data * v.data[:, None, None])
    if recording((x, v)):
        def pull():
            g = out.grad
            if x.requires_grad:
                accumulate(x, g * v.data[:, None, None])
            if v.requires_grad:
                accumulate(v, (g * x.data).sum(axis=(1, 2)))
        push(out, pull)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    if recording((x,)):
        mask = x.data > 0  # subgradient at 0 is 0
        def pull():
            accumulate(x, out.grad * mask)
        push(out, pull)
    return out


def gelu(x: Tensor) -> Tensor:
    """GELU via the tanh approximation (constant 0.044715)."""
    d = x.data
    inner = _GELU_C * (d + _GELU_K * d * d * d)
    t = np.tanh(inner)
    out = Tensor(0.5 * d * (1.0 + t))
    if recording((x,)):
        def pull():
            local = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * d * d)
            accumulate(x, out.grad * local)
        push(out, pull)
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    if recording((x,)):
        def pull():
            accumulate(x, out.grad * y * (1.0 - y))
        push(out, pull)
    return out


def sin(x: Tensor) -> Tensor:
    out = Tensor(np.sin(x.data))
    if recording((x,)):
        def pull():
            accumulate(x, out.grad * np.cos(x.data))
        push(out, pull)
    return out


def cos(x: Tensor) -> Tensor:
    out = Tensor(np.cos(x.data))
    if recording((x,)):
        def pull():
            accumulate(x, -out.grad * np.sin(x.data))
        push(out, pull)
    return out


def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at ties."""
    out = Tensor(np.abs(x.data))
    if recording((x,)):
        def pull():
            accumulate(x, out.grad * np.sign(x.data))
        push(out, pull)
    return out


# ---------------------------------------------------------------------------
# reductions and normalizations

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.data))
    if recording((x,)):
        def pull():
            accumulate(x, np.full(x.shape, out.grad, dtype=x.dtype))
        push(out, pull)
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.sum(x.data) / n)
    if recording((x,)):
        def pull():
            accumulate(x, np.full(x.shape, out.grad / n, dtype=x.dtype))
        push(out, pull)
    return out


def softmax(x: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "softmax")
    if x.shape[axis] == 0:
        raise ShapeError("softmax: empty axis")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)
    if recording((x,)):
        def pull():
            g = out.grad
            accumulate(x, y * (g - np.sum(g * y, axis=axis, keepdims=True)))
        push(out, pull)
    return out


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "l2_normalize")
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True) + eps)
    y = x.data / n
    out = Tensor(y)
    if recording((x,)):
        def pull():
            g = out.grad
            accumulate(x, g / n - x.data * (np.sum(g * x.data, axis=axis, keepdims=True) / (n * n * n)))
        push(out, pull)
    return out


def layer_norm_channels(x: Tensor, gamma: Tensor, eps: float = 1e-6) -> Tensor:
    """Bias-free layer norm across channels, per spatial location."""
    if x.ndim != 3:
        raise ShapeError(f"layer_norm_channels: expected C x H x W, got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,):
        raise ShapeError(f"layer_norm_channels: gamma {gamma.shape} does not match {c} channels")
    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gamma.data[:, None, None])
    if recording((x, gamma)):
        def pull():
            g = out.grad
            if gamma.requires_grad:
                accumulate(gamma, (g * xhat).sum(axis=(1, 2)))
            if x.requires_grad:
                gh = g * gamma.data[:, None, None]
                accumulate(
                    x,
                    (inv / c) * (c * gh - gh.sum(axis=0) - xhat * (gh * xhat).sum(axis=0)),
                )
        push(out, pull)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: C x H x W -> C."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool: expected C x H x W, got {x.shape}")
    h, w = x.shape[1], x.shape[2]
    out = Tensor(x.data.mean(axis=(1, 2)))
    if recording((x,)):
        def pull():
            accumulate(x, np.broadcast_to(out.grad[:, None, None], x.shape) / (h * w))
        push(out, pull)
    return out


# ---------------------------------------------------------------------------
# structure: matmul, reshape, concat, slicing, pixel (un)shuffle

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    if recording((a, b)):
        def pull():
            g = out.grad
            if a.requires_grad:
                accumulate(a, g @ b.data.T)
            if b.requires_grad:
                accumulate(b, a.data.T @ g)
        push(out, pull)
    return out


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got {x.shape}")
    out = Tensor(x.data.T)
    if recording((x,)):
        def pull():
            accumulate(x, out.grad.T)
        push(out, pull)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(np.reshape(x.data, shape))
    if recording((x,)):
        def pull():
            accumulate(x, np.reshape(out.grad, x.shape))
        push(out, pull)
    return out


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: needs at least one part")
    axis = _norm_axis(axis, parts[0].ndim, "concat")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(f"concat: extent mismatch off axis {axis}: {base} vs {other}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    if recording(parts):
        offsets = np.cumsum([0] + [p.shape[axis] for p in parts])
        def pull():
            g = out.grad
            for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(start, stop)
                    accumulate(p, g[tuple(idx)])
        push(out, pull)
    return out


def slice_along(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "slice_along")
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice_along: [{start}:{stop}] invalid for extent {x.shape[axis]}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx_t = tuple(idx)
    out = Tensor(x.data[idx_t])
    if recording((x,)):
        def pull():
            gx = np.zeros(x.shape, dtype=x.dtype)
            gx[idx_t] = out.grad
            accumulate(x, gx)
        push(out, pull)
    return out


def _space_to_depth(arr: np.ndarray, r: int) -> np.ndarray:
    c, h, w = arr.shape
    return (
        arr.reshape(c, h // r, r, w // r, r)
        .transpose(0, 2, 4, 1, 3)
        .reshape(c * r * r, h // r, w // r)
    )


def _depth_to_space(arr: np.ndarray, r: int) -> np.ndarray:
    c, h, w = arr.shape
    return (
        arr.reshape(c // (r * r), r, r, h, w)
        .transpose(0, 3, 1, 4, 2)
        .reshape(c // (r * r), h * r, w * r)
    )


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Lossless space-to-depth: C x H x W -> C*r^2 x H/r x W/r.

    Output channel c*r*r + dy*r + dx holds input channel c at sub-pixel
    offset (dy, dx).
    """
    if x.ndim != 3:
        raise ShapeError(f"pixel_unshuffle: expected C x H x W, got {x.shape}")
    if r < 1 or x.shape[1] % r or x.shape[2] % r:
        raise ShapeError(f"pixel_unshuffle: spatial extents {x.shape[1:]} not divisible by r={r}")
    out = Tensor(_space_to_depth(x.data, r))
    if recording((x,)):
        def pull():
            accumulate(x, _depth_to_space(out.grad, r))
        push(out, pull)
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_unshuffle`: C x H x W -> C/r^2 x H*r x W*r."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_shuffle: expected C x H x W, got {x.shape}")
    if r < 1 or x.shape[0] % (r * r):
        raise ShapeError(f"pixel_shuffle: channel extent {x.shape[0]} not divisible by r^2={r * r}")
    out = Tensor(_depth_to_space(x.data, r))
    if recording((x,)):
        def pull():
            accumulate(x, _space_to_depth(out.grad, r))
        push(out, pull)
    return out


# ---------------------------------------------------------------------------
# padding and convolutions

def _reflect_sources(n: int, lo: int, hi: int) -> np.ndarray:
    """Source index in [0, n) for each position of a reflect-padded axis."""
    if n == 1:
        return np.zeros(lo + 1 + hi, dtype=np.intp)
    q = np.arange(-lo, n + hi)
    period = 2 * n - 2
    m = np.abs(q) % period
    return np.where(m >= n, period - m, m)


def reflect_pad2d(x: Tensor, pads) -> Tensor:
    """Reflect-pad the two spatial axes of C x H x W.

    ``pads`` is an int (all four sides) or (top, bottom, left, right).
    Each pad must be at most extent-1, as reflection without edge repeat
    requires.
    """
    if x.ndim != 3:
        raise ShapeError(f"reflect_pad2d: expected C x H x W, got {x.shape}")
    if isinstance(pads, int):
        pads = (pads, pads, pads, pads)
    pt, pb, pl, pr = pads
    _, h, w = x.shape
    if min(pt, pb, pl, pr) < 0 or max(pt, pb) > h - 1 or max(pl, pr) > w - 1:
        raise ShapeError(f"reflect_pad2d: pads {pads} too large for spatial extents {(h, w)}")
    out = Tensor(np.pad(x.data, ((0, 0), (pt, pb), (pl, pr)), mode="reflect"))
    if recording((x,)):
        rows = _reflect_sources(h, pt, pb)
        cols = _reflect_sources(w, pl, pr)
        def pull():
            g = out.grad
            folded = np.zeros((x.shape[0], h, g.shape[2]), dtype=g.dtype)
            np.add.at(folded, (slice(None), rows), g)
            gx = np.zeros(x.shape, dtype=g.dtype)
            np.add.at(gx, (slice(None), slice(None), cols), folded)
            accumulate(x, gx)
        push(out, pull)
    return out


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    return win


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zeros",
) -> Tensor:
    """2-d cross-correlation: Cin x H x W with Cout x Cin x kh x kw weights.

    Odd kernels only.  ``pad_mode`` is "zeros" or "reflect"; reflect padding
    is realized as a separate differentiable pad so the core stays zero-pad.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 3-d input and 4-d weight, got {x.shape}, {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if x.shape[0] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} outputs")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if pad_mode not in ("zeros", "reflect"):
        raise ShapeError(f"conv2d: unknown pad_mode {pad_mode!r}")

    if pad_mode == "reflect" and padding > 0:
        x = reflect_pad2d(x, padding)
        padding = 0

    _, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: non-positive output extent {ho}x{wo}")

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return _conv1x1(x, weight, bias)

    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    windows = _conv_windows(xp, kh, kw, stride)
    y = np.tensordot(weight.data, windows, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        y = y + bias.data[:, None, None]
    out = Tensor(y)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if recording(inputs):
        def pull():
            g = out.grad
            if weight.requires_grad:
                accumulate(weight, np.tensordot(g, windows, axes=([1, 2], [1, 2])))
            if bias is not None and bias.requires_grad:
                accumulate(bias, g.sum(axis=(1, 2)))
            if x.requires_grad:
                if stride == 1 and p <= kh - 1 and p <= kw - 1:
                    # grad wrt input is a full correlation with rotated weights
                    pg = np.pad(g, ((0, 0), (kh - 1 - p, kh - 1 - p), (kw - 1 - p, kw - 1 - p)))
                    rot = weight.data[:, :, ::-1, ::-1]
                    gw = sliding_window_view(pg, (kh, kw), axis=(1, 2))
                    accumulate(x, np.tensordot(rot, gw, axes=([0, 2, 3], [0, 3, 4])))
                else:
                    gxp = np.zeros_like(xp)
                    for i in range(kh):
                        for j in range(kw):
                            gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.tensordot(
                                weight.data[:, :, i, j], g, axes=([0], [0])
                            )
                    accumulate(x, gxp[:, p : p + h, p : p + w] if p else gxp)
        push(out, pull)
    return out


def _conv1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    cout, cin = weight.shape[0], weight.shape[1]
    _, h, w = x.shape
    w2 = weight.data.reshape(cout, cin)
    x2 = x.data.reshape(cin, h * w)
    y = (w2 @ x2).reshape(cout, h, w)
    if bias is not None:
        y = y + bias.data[:, None, None]
    out = Tensor(y)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    if recording(inputs):
        def pull():
            g2 = out.grad.reshape(cout, h * w)
            if weight.requires_grad:
                accumulate(weight, (g2 @ x2.T).reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                accumulate(bias, g2.sum(axis=1))
            if x.requires_grad:
                accumulate(x, (w2.T @ g2).reshape(x.shape))
        push(out, pull)
    return out


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-channel convolution with a C x 1 x k x k kernel; same-size output."""
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d: expected C x 1 x k x k weight, got {weight.shape}")
    c, h, w = x.shape
    if weight.shape[0] != c:
        raise ShapeError(f"depthwise_conv2d: input has {c} channels, weight expects {weight.shape[0]}")
    kh, kw = weight.shape[2], weight.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"depthwise_conv2d: kernel extents must be odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"depthwise_conv2d: bias shape {bias.shape} does not match {c} channels")

    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    k = weight.data[:, 0]
    y = np.zeros_like(x.data)
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i : i + h, j : j + w] * k[:, i, j][:, None, None]
    if bias is not None:
        y = y + bias.data[:, None, None]
    out = Tensor(y)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if recording(inputs):
        def pull():
            g = out.grad
            if weight.requires_grad:
                gk = np.empty_like(weight.data)
                for i in range(kh):
                    for j in range(kw):
                        gk[:, 0, i, j] = (g * xp[:, i : i + h, j : j + w]).sum(axis=(1, 2))
                accumulate(weight, gk)
            if bias is not None and bias.requires_grad:
                accumulate(bias, g.sum(axis=(1, 2)))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i : i + h, j : j + w] += g * k[:, i, j][:, None, None]
                accumulate(x, gxp[:, ph : ph + h, pw : pw + w])
        push(out, pull)
    return out
