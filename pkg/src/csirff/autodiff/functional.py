"""Differentiable operations on :class:`Tensor`.

Shapes are explicit: apart from bias addition nothing broadcasts.
"""
from __future__ import annotations

import warnings

import numpy as np

from .kernels import col2im, gelu_backward, gelu_forward, im2col
from .tensor import Tensor, make_result

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    c = np.asarray(c, dtype=a.dtype)
    if c.shape != a.shape:
        raise ValueError(f"mul_const: shape mismatch {a.shape} vs {c.shape}")
    return make_result(a.data * c, (a,), lambda g: (g * c,))


def scale(a: Tensor, s: float) -> Tensor:
    return make_result(a.data * s, (a,), lambda g: (g * s,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.asarray(a.data.sum()), (a,),
                       lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return make_result(np.asarray(a.data.mean()), (a,),
                       lambda g: (np.broadcast_to(g / n, a.shape).astype(a.dtype),))


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-d tensor")
    return make_result(a.data.T, (a,), lambda g: (g.T,))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        index = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return out

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return make_result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[N, D_in] @ weight[D_in, D_out] + bias[D_out]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense: incompatible shapes {x.shape} and {weight.shape}")
    out = x.data @ weight.data
    if bias is None:
        return make_result(out, (x, weight), lambda g: (g @ weight.data.T, x.data.T @ g))
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"dense: bias shape {bias.shape} != ({weight.shape[1]},)")
    return make_result(out + bias.data, (x, weight, bias),
                       lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: tuple[int, int] = (0, 0)) -> Tensor:
    """2-d cross-correlation with zero padding.

    ``x`` is ``[N, C_in, H, W]`` (a single ``[C_in, H, W]`` input is accepted),
    ``weight`` is ``[C_out, C_in, kH, kW]`` and ``padding`` is ``(padH, padW)``.
    """
    single = x.data.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects [N,C,H,W] input and [O,C,kH,kW] kernels")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    ph, pw = padding
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, kernels expect {ci}")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ValueError("conv2d: kernel larger than padded input")
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = im2col(np.ascontiguousarray(xp), kh, kw)
    wmat = weight.data.reshape(o, -1)
    out = (wmat @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gw = (gmat @ cols.T).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = wmat.T @ gmat
            gxp = col2im(gcols, xp.shape, kh, kw)
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    result = make_result(out, parents, backward)
    if single:
        result = reshape(result, result.shape[1:])
    return result


def layer_norm(x: Tensor, axes, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """``(x - mean) / sqrt(var + eps) * gain + bias`` with statistics over ``axes``.

    ``gain`` and ``bias`` have shape ``tuple(x.shape[a] for a in axes)``.
    """
    axes = tuple(sorted(a % x.data.ndim for a in (axes if isinstance(axes, (tuple, list)) else (axes,))))
    norm_shape = tuple(x.shape[a] for a in axes)
    if gain.shape != norm_shape or bias.shape != norm_shape:
        raise ValueError(f"layer_norm: gain/bias must have shape {norm_shape}")
    bshape = [1] * x.data.ndim
    for a in axes:
        bshape[a] = x.shape[a]
    gb, bb = gain.data.reshape(bshape), bias.data.reshape(bshape)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    other = tuple(i for i in range(x.data.ndim) if i not in axes)

    def backward(g):
        gxhat = g * gb
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        ggain = (g * xhat).sum(axis=other).reshape(norm_shape)
        gbias = g.sum(axis=other).reshape(norm_shape)
        return gx, ggain, gbias

    return make_result(xhat * gb + bb, (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    y, cdf = gelu_forward(x.data)
    return make_result(y, (x,), lambda g: (gelu_backward(x.data, cdf, g),))


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of ``x[N, D]`` to unit Euclidean norm."""
    if x.data.ndim != 2:
        raise ValueError("l2_normalize expects [N, D]")
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if np.any(norm < eps):
        warnings.warn("zero-norm row in l2_normalize; norm floored", RuntimeWarning, stacklevel=2)
    floored = np.maximum(norm, eps)
    y = x.data / floored

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / floored,)

    return make_result(y, (x,), backward)


def _logsumexp(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is None:
        mx = x.max(axis=-1, keepdims=True)
        return mx + np.log(np.exp(x - mx).sum(axis=-1, keepdims=True))
    masked = np.where(mask, x, -np.inf)
    mx = masked.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return mx + np.log(np.where(mask, np.exp(masked - mx), 0.0).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (log-sum-exp stabilized)."""
    y = np.exp(x.data - _logsumexp(x.data))

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    out = x.data - _logsumexp(x.data)
    p = np.exp(out)
    return make_result(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def masked_log_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """``x[i, j] - log sum_{k: mask[i, k]} exp(x[i, k])`` for every ``j``.

    Rows with an empty mask produce undefined values and must not be used.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError("masked_log_softmax: mask shape mismatch")
    lse = _logsumexp(x.data, mask)
    out = x.data - lse
    p = np.where(mask, np.exp(np.where(mask, out, 0.0)), 0.0)
    return make_result(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; the gradient is zero where the floor is active."""
    clipped = np.maximum(x.data, floor) if floor > 0 else x.data
    active = x.data >= floor if floor > 0 else np.ones(x.shape, dtype=bool)
    return make_result(np.log(clipped), (x,), lambda g: (np.where(active, g / clipped, 0.0),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,))
