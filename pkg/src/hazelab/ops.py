"""Network operations on Tensors: forward passes and their analytic backwards.

Conventions fixed here:
  - conv2d is cross-correlation (no kernel flip), stride 1, `same` padding
    means zero padding with odd kernels.
  - maxpool2 breaks ties toward the first maximum in row-major window order.
  - upsample2_bilinear samples at half-pixel centers with border clamp; its
    backward is the transpose of the interpolation matrix.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .tensor import FLOAT, Tensor, make_node

__all__ = [
    "conv2d",
    "relu",
    "maxpool2",
    "upsample2_bilinear",
    "concat_channels",
    "softmax_spatial",
    "weighted_global_pool",
    "broadcast_spatial",
    "mse_loss",
]


def _require_nchw(name: str, t: Tensor):
    if t.data.ndim != 4:
        raise ShapeError(f"{name}: expected a 4-D NCHW tensor, got shape {t.shape}")


# -- convolution --------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int) -> tuple[np.ndarray, int, int]:
    """Columns of an already-padded NCHW array: (N, C*kh*kw, OH*OW)."""
    n, c, hp, wp = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    if kh == 1 and kw == 1:
        return xp.reshape(n, c, oh * ow), oh, ow
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx] = xp[:, :, ky : ky + oh, kx : kx + ow]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _corr(xp: np.ndarray, w4: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlate padded input with (O, C, kh, kw) kernels via one GEMM.

    Returns (output, columns); callers keep the columns when the weight
    gradient will need them, avoiding a second im2col pass.
    """
    o, _, kh, kw = w4.shape
    cols, oh, ow = _im2col(xp, kh, kw)
    out = np.matmul(w4.reshape(o, -1), cols)  # (N, O, OH*OW)
    return out.reshape(xp.shape[0], o, oh, ow), cols


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Cross-correlate `x` (N,Cin,H,W) with `weights` (Cout,Cin,kH,kW), stride 1.

    `same` zero-pads so H and W are preserved (odd kernels only); `valid`
    yields H-kH+1 by W-kW+1.
    """
    _require_nchw("conv2d input", x)
    _require_nchw("conv2d weights", weights)
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weights.shape
    if cin_w != cin:
        raise ShapeError(
            f"conv2d: input has {cin} channels (shape {x.shape}) but weights expect "
            f"{cin_w} (shape {weights.shape})"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: `same` padding needs odd kernels, got {kh}x{kw}")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    out, _ = _corr(xp, weights.data)
    out += bias.data[None, :, None, None]

    def backward(g: np.ndarray):
        # One im2col of the fully padded output gradient serves both dW and dX
        # (cheaper than input-side columns: Cout is small in the color module).
        db = g.sum(axis=(0, 2, 3))
        hp, wp = xp.shape[2], xp.shape[3]
        if kh > 1 or kw > 1:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        else:
            gp = g
        gcols, fh, fw = _im2col(gp, kh, kw)  # (N, Cout*kh*kw, hp*wp)
        # dW: correlation of the input with g; kernel-tap axis comes out flipped.
        xmat = xp.reshape(n, cin, hp * wp)
        dwm = np.matmul(gcols, xmat.transpose(0, 2, 1)).sum(axis=0)  # (Cout*kh*kw, Cin)
        dw = dwm.reshape(cout, kh, kw, cin)[:, ::-1, ::-1, :].transpose(0, 3, 1, 2)
        dw = np.ascontiguousarray(dw)
        # dX: full correlation of g with the flipped kernel, cropped to the
        # unpadded input extent.
        wt = np.ascontiguousarray(weights.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dxp = np.matmul(wt.reshape(cin, -1), gcols).reshape(n, cin, hp, wp)
        dx = dxp[:, :, ph : ph + h, pw : pw + w]
        return np.ascontiguousarray(dx), dw, db

    return make_node(out, (x, weights, bias), backward)


# -- pointwise / pooling -------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(
        np.where(mask, x.data, FLOAT(0)), (x,), lambda g: (np.where(mask, g, FLOAT(0)),)
    )


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; H and W must be even."""
    _require_nchw("maxpool2", x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: H and W must be even, got {h}x{w}")
    oh, ow = h // 2, w // 2
    # Row-major window layout so argmax picks the first element on ties.
    windows = (
        x.data.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    )
    idx = windows.argmax(axis=4)
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]

    def backward(g: np.ndarray):
        dwin = np.zeros((n, c, oh, ow, 4), dtype=FLOAT)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=4)
        dx = (
            dwin.reshape(n, c, oh, ow, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (np.ascontiguousarray(dx),)

    return make_node(out, (x,), backward)


@lru_cache(maxsize=64)
def _upsample2_matrix(src: int) -> np.ndarray:
    """(2*src, src) interpolation matrix: dst center maps to (dst+0.5)/2 - 0.5."""
    dst = np.arange(2 * src)
    pos = (dst + 0.5) / 2.0 - 0.5
    i0f = np.floor(pos)
    w1 = pos - i0f
    i0 = np.clip(i0f, 0, src - 1).astype(np.int64)
    i1 = np.clip(i0f + 1, 0, src - 1).astype(np.int64)
    m = np.zeros((2 * src, src), dtype=FLOAT)
    np.add.at(m, (dst, i0), (1.0 - w1).astype(FLOAT))
    np.add.at(m, (dst, i1), w1.astype(FLOAT))
    return m


def upsample2_bilinear(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling with half-pixel centers and border clamp."""
    _require_nchw("upsample2_bilinear", x)
    n, c, h, w = x.shape
    mh = _upsample2_matrix(h)
    mw = _upsample2_matrix(w)
    up = np.einsum("Hh,nchw,Ww->ncHW", mh, x.data, mw, optimize=True)

    def backward(g: np.ndarray):
        dx = np.einsum("Hh,ncHW,Ww->nchw", mh, g, mw, optimize=True)
        return (dx,)

    return make_node(up.astype(FLOAT, copy=False), (x,), backward)


# -- channel plumbing ----------------------------------------------------------


def concat_channels(inputs: list[Tensor]) -> Tensor:
    if not inputs:
        raise ShapeError("concat_channels: empty input list")
    for t in inputs:
        _require_nchw("concat_channels", t)
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise ShapeError(
                f"concat_channels: shape {t.shape} incompatible with {inputs[0].shape} "
                "(N, H, W must match)"
            )
    out = np.concatenate([t.data for t in inputs], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in inputs])

    def backward(g: np.ndarray):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(inputs)))

    return make_node(out, tuple(inputs), backward)


def broadcast_spatial(x: Tensor, target_hw: tuple[int, int]) -> Tensor:
    """Replicate an N,F,1,1 tensor over a target H,W; backward sums the replicas."""
    _require_nchw("broadcast_spatial", x)
    n, f, h, w = x.shape
    if (h, w) != (1, 1):
        raise ShapeError(f"broadcast_spatial: input spatial dims must be 1x1, got {h}x{w}")
    th, tw = target_hw
    out = np.broadcast_to(x.data, (n, f, th, tw)).copy()

    def backward(g: np.ndarray):
        return (g.sum(axis=(2, 3), keepdims=True),)

    return make_node(out, (x,), backward)


# -- global estimation ---------------------------------------------------------


def softmax_spatial(x: Tensor) -> Tensor:
    """Softmax over all spatial positions of an N,1,h,w tensor (max-subtracted)."""
    _require_nchw("softmax_spatial", x)
    n, c, h, w = x.shape
    if c != 1:
        raise ShapeError(f"softmax_spatial: expected 1 channel, got {c}")
    flat = x.data.reshape(n, -1)
    z = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = s.reshape(n, 1, h, w)

    def backward(g: np.ndarray):
        gf = g.reshape(n, -1)
        dot = (gf * s).sum(axis=1, keepdims=True)
        dx = s * (gf - dot)
        return (dx.reshape(n, 1, h, w).astype(FLOAT, copy=False),)

    return make_node(out.astype(FLOAT, copy=False), (x,), backward)


def weighted_global_pool(features: Tensor, weights: Tensor) -> Tensor:
    """Confidence-weighted average of local features: out[n,f] = sum_hw F*C.

    `weights` must be nonnegative and sum to 1 per batch item (softmax output);
    a sum off by more than 1e-4 is a contract violation upstream.
    """
    _require_nchw("weighted_global_pool features", features)
    _require_nchw("weighted_global_pool weights", weights)
    n, f, h, w = features.shape
    wn, wc, wh, ww = weights.shape
    if (wn, wc, wh, ww) != (n, 1, h, w):
        raise ShapeError(
            f"weighted_global_pool: weights shape {weights.shape} != ({n}, 1, {h}, {w})"
        )
    if np.any(weights.data < 0):
        raise ShapeError("weighted_global_pool: negative weights")
    sums = weights.data.sum(axis=(1, 2, 3))
    if np.any(np.abs(sums - 1.0) > 1e-4):
        raise ShapeError(
            f"weighted_global_pool: weights must sum to 1 per item, got sums {sums}"
        )
    out = np.einsum("nfhw,nqhw->nf", features.data, weights.data).reshape(n, f, 1, 1)

    def backward(g: np.ndarray):
        gv = g.reshape(n, f)
        dfeat = gv[:, :, None, None] * weights.data
        dweights = np.einsum("nf,nfhw->nhw", gv, features.data).reshape(n, 1, h, w)
        return dfeat.astype(FLOAT, copy=False), dweights.astype(FLOAT, copy=False)

    return make_node(out.astype(FLOAT, copy=False), (features, weights), backward)


# -- loss ----------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference; returns a scalar tensor."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss: pred shape {pred.data.shape} != target shape {target.data.shape}"
        )
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    count = diff.size
    value = np.asarray((diff * diff).mean(), dtype=FLOAT).reshape(())

    def backward(g: np.ndarray):
        scale = (2.0 / count) * float(g)
        d = (scale * diff).astype(FLOAT)
        return d, -d

    return make_node(value, (pred, target), backward)
