"""Differentiable operators used by the radio-map networks.

Layout is NCHW throughout. Convolutions use the cross-correlation convention
and are computed tap by tap (one matmul per kernel offset) so no im2col buffer
is ever materialised.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .tensor import Tensor, default_dtype

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._from_op(
        np.asarray(x.data.sum(), dtype=x.data.dtype), (x,),
        lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=True),),
    )


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return Tensor._from_op(
        np.asarray(x.data.mean(), dtype=x.data.dtype), (x,),
        lambda g: (np.full(shape, g / n, dtype=g.dtype),),
    )


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    xd = x.data
    y = (0.5 * xd * (1.0 + erf(xd / _SQRT2))).astype(xd.dtype, copy=False)
    return Tensor._from_op(y, (x,), lambda g: (g * _gelu_grad(xd),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),))


# shape -----------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.ascontiguousarray(x.data.transpose(axes)), (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack along axis 1, ``a``'s channels first."""
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError("concat_channels expects NCHW tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concat {a.shape} and {b.shape}: batch/spatial mismatch")
    ca = a.shape[1]
    return Tensor._from_op(
        np.concatenate([a.data, b.data], axis=1), (a, b),
        lambda g: (np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:])),
    )


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return Tensor._from_op(
        y, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)
    )


# linear algebra --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b`` over the trailing two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(np.matmul(ad, bd), (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T (+ b)`` on the last axis; ``w`` is (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight in {w.shape[1]}")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is not None:
        y = y + b.data
    k, u = wd.shape[1], wd.shape[0]

    def back(g):
        g2 = g.reshape(-1, u)
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, k)
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(y, parents, back)


def softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), back)


def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise each (b, h, w) channel vector, then scale by gamma and shift by beta."""
    if x.ndim != 4:
        raise ValueError("layer_norm_channels expects NCHW")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"gamma/beta must have shape ({C},)")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data.reshape(1, C, 1, 1)
    y = xhat * gd + beta.data.reshape(1, C, 1, 1)

    def back(g):
        gx_hat = g * gd
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor._from_op(y, (x, gamma, beta), back)


# convolution -----------------------------------------------------------------

def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided 2-D cross-correlation plus bias. ``w`` is (Cout, Cin, k, k)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects NCHW input and (Cout, Cin, k, k) weight")
    B, Cin, H, W = x.shape
    Cout, wc, kh, kw = w.shape
    if wc != Cin:
        raise ValueError(f"conv2d: input has {Cin} channels, weight expects {wc}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    Ho, Wo = conv_out_size(H, kh, stride, pad), conv_out_size(W, kw, stride, pad)
    if Ho < 1 or Wo < 1 or (H + 2 * pad) < kh or (W + 2 * pad) < kw:
        raise ValueError(f"conv2d: invalid geometry for input {H}x{W}, kernel {kh}x{kw}")
    xd, wd = x.data, w.data
    # channel-major copy so each kernel tap is a single (Cout, Cin) @ (Cin, B*Ho*Wo) GEMM
    xt = np.ascontiguousarray(xd.transpose(1, 0, 2, 3))
    xp = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xt
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    P = B * Ho * Wo
    # per-tap weight matrices must be contiguous or matmul skips BLAS
    wt = np.ascontiguousarray(wd.transpose(2, 3, 0, 1))
    wtt = np.ascontiguousarray(wd.transpose(2, 3, 1, 0))

    def tap(i, j):
        return xp[:, :, i:i + hs:stride, j:j + ws:stride].reshape(Cin, P)

    out = np.zeros((Cout, P), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wt[i, j] @ tap(i, j)
    if b is not None:
        out += b.data.reshape(Cout, 1)
    out = np.ascontiguousarray(out.reshape(Cout, B, Ho, Wo).transpose(1, 0, 2, 3))

    def back(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(Cout, P)
        gxp = np.zeros_like(xp)
        gw = np.empty((kh, kw, Cout, Cin), dtype=wd.dtype)
        for i in range(kh):
            for j in range(kw):
                gw[i, j] = gt @ tap(i, j).T
                # rank-1 products are much faster as a broadcast multiply
                d = wtt[i, j] * gt if Cout == 1 else wtt[i, j] @ gt
                gxp[:, :, i:i + hs:stride, j:j + ws:stride] += d.reshape(
                    Cin, B, Ho, Wo
                )
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        grads = [np.ascontiguousarray(gx.transpose(1, 0, 2, 3)), gw.transpose(2, 3, 0, 1).copy()]
        if b is not None:
            grads.append(gt.sum(axis=1))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, back)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Kernel-2, stride-2 transposed convolution (exact 2x upsampling).

    ``w`` is (Cin, Cout, 2, 2); input pixel (h, w) scatters ``value * kernel``
    into output patch rows 2h..2h+1, cols 2w..2w+1.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (2, 2):
        raise ValueError("conv_transpose2d expects NCHW input and (Cin, Cout, 2, 2) weight")
    B, Cin, H, W = x.shape
    if w.shape[0] != Cin:
        raise ValueError(f"conv_transpose2d: input has {Cin} channels, weight expects {w.shape[0]}")
    Cout = w.shape[1]
    xd, wd = x.data, w.data
    P = B * H * W
    xt = np.ascontiguousarray(xd.transpose(1, 0, 2, 3)).reshape(Cin, P)
    wt = np.ascontiguousarray(wd.transpose(2, 3, 0, 1))  # (2, 2, Cin, Cout)
    wtt = np.ascontiguousarray(wd.transpose(2, 3, 1, 0))  # (2, 2, Cout, Cin)
    out = np.empty((Cout, B, 2 * H, 2 * W), dtype=xd.dtype)
    for i in range(2):
        for j in range(2):
            out[:, :, i::2, j::2] = (wtt[i, j] @ xt).reshape(Cout, B, H, W)
    if b is not None:
        out += b.data.reshape(Cout, 1, 1, 1)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def back(g):
        gtr = g.transpose(1, 0, 2, 3)
        gx = np.zeros((Cin, P), dtype=xd.dtype)
        gw = np.empty_like(wd)
        for i in range(2):
            for j in range(2):
                gs = np.ascontiguousarray(gtr[:, :, i::2, j::2]).reshape(Cout, P)
                gx += wt[i, j] @ gs
                gw[:, :, i, j] = xt @ gs.T
        grads = [np.ascontiguousarray(gx.reshape(Cin, B, H, W).transpose(1, 0, 2, 3)), gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, back)


def mse(pred: Tensor, truth, weight=None) -> Tensor:
    """Mean of ``(pred - truth)**2``; with a 0/1 ``weight`` the mean runs over weighted cells only."""
    truth = as_tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {truth.shape}")
    diff = pred.data - truth.data
    if weight is not None:
        wt = np.asarray(weight, dtype=diff.dtype)
        n = float(wt.sum())
        if n == 0:
            raise ValueError("mse: weight selects no elements")
        diff = diff * wt
    else:
        n = diff.size
    val = np.asarray((diff * diff).sum() / n, dtype=diff.dtype)
    return Tensor._from_op(
        val, (pred, truth), lambda g: ((2.0 / n) * g * diff, (-2.0 / n) * g * diff)
    )


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()))
