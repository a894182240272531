"""Dense float32 numerical primitives: convolution, pooling, resampling,
normalization, and sliding cosine correlation.

Conventions used throughout the package:

* images and feature stacks are channel-first ``(C, H, W)`` float32 arrays,
  convolution kernel banks are ``(O, C, kh, kw)``;
* 2-D maps are plain ``(H, W)`` float32 arrays;
* everything is a pure function of its inputs, no hidden state, so all
  operations are safe to call from concurrent workers.

Accumulations that sum more than a few thousand terms (the sliding-window
norms in :func:`xcorr_cosine`) run in float64 and are cast back to float32.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from .errors import ShapeMismatchError

__all__ = [
    "conv2d",
    "maxpool2d",
    "relu",
    "softmax",
    "upsample_bilinear",
    "minmax_normalize",
    "xcorr_cosine",
    "conv_output_extent",
    "pool_output_extent",
]

_F32 = np.float32


def _as_f32(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    return a


def conv_output_extent(extent: int, k: int, stride: int, pad: int) -> int:
    """Spatial extent of a convolution output along one axis."""
    return (extent + 2 * pad - k) // stride + 1


def pool_output_extent(extent: int, k: int, stride: int, ceil_mode: bool) -> int:
    """Spatial extent of a pooling output along one axis.

    Ceil mode rounds the count up but still requires every window to start
    inside the input, so a trailing window that would begin past the end is
    dropped rather than left empty.
    """
    if ceil_mode:
        n = -((extent - k) // -stride) + 1
        if (n - 1) * stride >= extent:
            n -= 1
        return n
    return (extent - k) // stride + 1


def conv2d(input, kernels, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation convolution of a (C, H, W) stack with an
    (O, C, kh, kw) kernel bank plus a per-output-channel bias.

    Zero padding of ``pad`` pixels on every side, square stride.  Output is
    (O, H', W') with H' = floor((H + 2*pad - kh) / stride) + 1.

    Implemented as kh*kw shifted matrix products so the only large
    temporaries are one padded copy of the input and the output itself.
    """
    x = _as_f32(input)
    w = _as_f32(kernels)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects (C,H,W) input and (O,C,kh,kw) kernels, "
            f"got {x.shape} and {w.shape}"
        )
    c, h, wid = x.shape
    o, ck, kh, kw = w.shape
    if ck != c:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input {x.shape} has {c} channels, "
            f"kernels {w.shape} expect {ck}"
        )
    if stride < 1 or pad < 0:
        raise ShapeMismatchError(f"conv2d needs stride >= 1, pad >= 0, got {stride}, {pad}")
    oh = conv_output_extent(h, kh, stride, pad)
    ow = conv_output_extent(wid, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(
            f"conv2d output extent {oh}x{ow} < 1 for input {x.shape}, "
            f"kernel {w.shape}, stride {stride}, pad {pad}"
        )

    if pad > 0:
        xp = np.zeros((c, h + 2 * pad, wid + 2 * pad), dtype=np.float32)
        xp[:, pad : pad + h, pad : pad + wid] = x
    else:
        xp = x

    out = np.zeros((o, oh * ow), dtype=np.float32)
    # One contiguous (O, C) matrix per kernel offset; strided slices of the
    # kernel bank would knock the products off the BLAS fast path.
    wmats = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    for u in range(kh):
        for v in range(kw):
            window = xp[:, u : u + stride * oh : stride, v : v + stride * ow : stride]
            out += wmats[u, v] @ window.reshape(c, oh * ow)
    out = out.reshape(o, oh, ow)
    if bias is not None:
        b = _as_f32(bias)
        if b.shape != (o,):
            raise ShapeMismatchError(f"conv2d bias shape {b.shape} != ({o},)")
        out += b[:, None, None]
    return out


def maxpool2d(input, k: int, stride: int, ceil_mode: bool = True) -> np.ndarray:
    """Per-channel sliding-window maximum over a (C, H, W) stack.

    With ``ceil_mode`` the output extent is ceil((H - k) / stride) + 1 and the
    trailing windows may hang over the edge; the maximum is then taken over
    the in-bounds cells only.  Without it the extent uses floor and every
    window is full.
    """
    x = _as_f32(input)
    if x.ndim != 3:
        raise ShapeMismatchError(f"maxpool2d expects (C,H,W), got {x.shape}")
    if k < 1 or stride < 1:
        raise ShapeMismatchError(f"maxpool2d needs k, stride >= 1, got {k}, {stride}")
    c, h, w = x.shape
    oh = pool_output_extent(h, k, stride, ceil_mode)
    ow = pool_output_extent(w, k, stride, ceil_mode)
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(
            f"maxpool2d output extent {oh}x{ow} < 1 for input {x.shape}, k={k}, stride={stride}"
        )
    # Pad to the exact coverage of the last window; -inf never wins a max.
    need_h = (oh - 1) * stride + k
    need_w = (ow - 1) * stride + k
    if need_h > h or need_w > w:
        # A large stride can also leave an unvisited tail on the other axis,
        # so crop while copying.
        xp = np.full((c, need_h, need_w), -np.inf, dtype=np.float32)
        xp[:, : min(h, need_h), : min(w, need_w)] = x[:, :need_h, :need_w]
    else:
        xp = x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(win.max(axis=(3, 4))[:, :oh, :ow])


def relu(input) -> np.ndarray:
    """Elementwise max(x, 0), shape preserved."""
    return np.maximum(_as_f32(input), np.float32(0.0))


def softmax(logits) -> np.ndarray:
    """Probability vector from a non-empty logit vector.

    Max-subtracted for overflow safety; the sum runs in float64.
    """
    v = np.asarray(logits, dtype=np.float32).ravel()
    if v.size == 0:
        raise ShapeMismatchError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ShapeMismatchError("softmax input contains non-finite values")
    e = np.exp((v - v.max()).astype(np.float64))
    return (e / e.sum()).astype(np.float32)


def upsample_bilinear(map2d, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resampling of a 2-D map to (out_h, out_w).

    Output pixel (i, j) samples the source at
    ``(i * (H-1) / (out_h-1), j * (W-1) / (out_w-1))``; a singleton output
    axis samples source index 0.  Works for down- as well as up-sampling.
    """
    m = _as_f32(map2d)
    if m.ndim != 2:
        raise ShapeMismatchError(f"upsample_bilinear expects a 2-D map, got {m.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(f"upsample_bilinear output extents must be >= 1, got {out_h}x{out_w}")
    h, w = m.shape

    def _coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.float64)
        return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)

    ys = _coords(h, out_h)
    xs = _coords(w, out_w)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)[:, None]
    fx = (xs - x0).astype(np.float32)[None, :]
    tl = m[np.ix_(y0, x0)]
    tr = m[np.ix_(y0, x1)]
    bl = m[np.ix_(y1, x0)]
    br = m[np.ix_(y1, x1)]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return (top + (bot - top) * fy).astype(np.float32)


def minmax_normalize(map2d) -> np.ndarray:
    """Rescale a 2-D map to [0, 1]; a constant map maps to all zeros."""
    m = _as_f32(map2d)
    lo = float(m.min())
    hi = float(m.max())
    if hi == lo:
        return np.zeros_like(m)
    return (m - np.float32(lo)) / np.float32(hi - lo)


def xcorr_cosine(kernel, field, method: str = "cosine") -> np.ndarray:
    """Slide a (C, kh, kw) kernel over a (C, H, W) field, scoring each
    location.

    ``method="cosine"`` (the default) scores the cosine between the kernel
    and the zero-padded field window centered at each cell, so the output is
    an (H, W) map in [-1, 1] and a window or kernel with zero norm scores 0.
    ``method="dot"`` returns the raw correlation instead (unbounded).

    A window is "centered" at (y, x) when it spans
    ``[y - (kh-1)//2, y + kh//2]``; for odd kernels that is the usual
    symmetric window.  FFT-based, accumulated in float64.
    """
    k = np.asarray(kernel, dtype=np.float64)
    f = np.asarray(field, dtype=np.float64)
    if k.ndim != 3 or f.ndim != 3:
        raise ShapeMismatchError(
            f"xcorr_cosine expects (C,kh,kw) kernel and (C,H,W) field, got {k.shape}, {f.shape}"
        )
    if k.shape[0] != f.shape[0]:
        raise ShapeMismatchError(
            f"xcorr_cosine channel mismatch: kernel {k.shape} vs field {f.shape}"
        )
    c, kh, kw = k.shape
    _, h, w = f.shape
    if kh > h or kw > w:
        raise ShapeMismatchError(
            f"xcorr_cosine kernel spatial extents {kh}x{kw} exceed field {h}x{w}"
        )
    if method not in ("cosine", "dot"):
        raise ShapeMismatchError(f"xcorr_cosine method must be 'cosine' or 'dot', got {method!r}")

    top, left = (kh - 1) // 2, (kw - 1) // 2
    fp = np.zeros((c, h + kh - 1, w + kw - 1), dtype=np.float64)
    fp[:, top : top + h, left : left + w] = f

    # Correlation == convolution with a spatially flipped kernel.
    num = fftconvolve(fp, k[:, ::-1, ::-1], mode="valid", axes=(1, 2)).sum(axis=0)
    if method == "dot":
        return num.astype(np.float32)

    knorm = float(np.sqrt((k * k).sum()))
    if knorm == 0.0:
        return np.zeros((h, w), dtype=np.float32)
    sq = (fp * fp).sum(axis=0)
    wsq = fftconvolve(sq, np.ones((kh, kw)), mode="valid")
    np.maximum(wsq, 0.0, out=wsq)  # FFT round-off can leave tiny negatives
    wnorm = np.sqrt(wsq)
    # Windows whose true norm is zero come back as FFT noise ~1e-8 of the
    # global scale; treat anything below that as empty and score it 0.
    wtol = 1e-7 * float(wnorm.max())
    if wtol == 0.0:
        return np.zeros((h, w), dtype=np.float32)
    out = np.where(wnorm > wtol, num / (knorm * np.maximum(wnorm, wtol)), 0.0)
    return np.clip(out, -1.0, 1.0).astype(np.float32)
