"""Pure-numpy kernels, used when the compiled extension is unavailable."""
import numpy as np
from scipy.special import ndtr


def im2col(xp, kh, kw):
    """Unfold padded ``xp[N, C, Hp, Wp]`` into ``cols[C*kh*kw, N*Ho*Wo]``.

    Row ``c*kh*kw + i*kw + j`` holds ``xp[:, c, i:i+Ho, j:j+Wo]``.
    """
    n, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + ho, j:j + wo]
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(cols, shape, kh, kw):
    """Adjoint of :func:`im2col`: scatter-add ``cols`` back onto a zero array of ``shape``."""
    n, c, hp, wp = shape
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + ho, j:j + wo] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


_INV_SQRT_2PI = 0.3989422804014327


def gelu_forward(x):
    """Return ``(x * Phi(x), Phi(x))``."""
    cdf = ndtr(x)
    return x * cdf, cdf


def gelu_backward(x, cdf, g):
    return g * (cdf + x * (np.exp(-0.5 * x * x) * _INV_SQRT_2PI))
