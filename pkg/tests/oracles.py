"""Brute-force reference implementations used as test oracles."""
import itertools
import math

import numpy as np


def conv2d_direct(x, w, b, padding):
    """Direct-summation cross-correlation, ``x[N,C,H,W]``, ``w[O,C,kh,kw]``."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = padding
    xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    ho, wo = h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else b[oi]
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[ni, ci, y + i, xx + j] * w[oi, ci, i, j]
                    out[ni, oi, y, xx] = acc
    return out


def dense_direct(x, w, b):
    n, din = x.shape
    dout = w.shape[1]
    out = np.zeros((n, dout))
    for i in range(n):
        for j in range(dout):
            out[i, j] = sum(x[i, k] * w[k, j] for k in range(din)) + b[j]
    return out


def layer_norm_direct(x, axes, gain, bias, eps=1e-5):
    """Loop over every index outside ``axes`` and normalize the slice by hand."""
    axes = tuple(sorted(axes))
    other = [a for a in range(x.ndim) if a not in axes]
    out = np.empty_like(x)
    for idx in itertools.product(*(range(x.shape[a]) for a in other)):
        sl = [slice(None)] * x.ndim
        for a, i in zip(other, idx):
            sl[a] = i
        v = x[tuple(sl)]
        vals = v.ravel()
        mu = sum(vals) / len(vals)
        var = sum((t - mu) ** 2 for t in vals) / len(vals)
        out[tuple(sl)] = (v - mu) / math.sqrt(var + eps) * gain + bias
    return out


def gelu_direct(x):
    return np.vectorize(lambda t: 0.5 * t * (1.0 + math.erf(t / math.sqrt(2.0))))(x)


def softmax_direct(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        m = max(x[i])
        e = [math.exp(t - m) for t in x[i]]
        s = sum(e)
        out[i] = [t / s for t in e]
    return out


def l2_normalize_direct(x):
    return np.stack([row / math.sqrt(sum(t * t for t in row)) for row in x])


def supcon_direct(z, labels, tau):
    """Literal enumeration of the supervised contrastive loss, mean over anchors with positives."""
    n = len(labels)
    total, anchors = 0.0, 0
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(float(np.dot(z[i], z[k])) / tau) for k in range(n) if k != i)
        total += -sum(math.log(math.exp(float(np.dot(z[i], z[j])) / tau) / denom) for j in pos) / len(pos)
        anchors += 1
    return total / anchors


def fuse_ap_direct(p):
    sums = [sum(p[n][m] for n in range(len(p))) for m in range(len(p[0]))]
    best = max(sums)
    return sums.index(best)


def _tie_break(scores, p):
    best = max(scores)
    tied = [m for m, s in enumerate(scores) if s == best]
    means = {m: sum(row[m] for row in p) / len(p) for m in tied}
    top = max(means.values())
    return min(m for m in tied if means[m] == top)


def fuse_mv_direct(p):
    m = len(p[0])
    votes = [0] * m
    for row in p:
        best = max(row)
        votes[list(row).index(best)] += 1
    return _tie_break(votes, p)


def fuse_bc_direct(p):
    m = len(p[0])
    scores = [0] * m
    for row in p:
        ranked = sorted(range(m), key=lambda k: (-row[k], k))
        for r, k in enumerate(ranked):
            scores[k] += m - 1 - r
    return _tie_break(scores, p)


def finite_difference(f, arr, index, eps=1e-6):
    old = arr[index]
    arr[index] = old + eps
    hi = f()
    arr[index] = old - eps
    lo = f()
    arr[index] = old
    return (hi - lo) / (2 * eps)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)
