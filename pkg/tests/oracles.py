"""Slow, direct reference implementations used only by the tests.

Nothing here imports the package's transform or conv code: every oracle is a
literal transcription of the defining sum.
"""

import math
from functools import lru_cache

import numpy as np


def dct1d_raw(x):
    n = len(x)
    return np.array([sum(x[i] * math.cos(math.pi / n * (i + 0.5) * k) for i in range(n)) for k in range(n)])


def _alpha(u, n):
    return math.sqrt(1.0 / n) if u == 0 else math.sqrt(2.0 / n)


def dct2d_loops(img):
    """Four nested loops over (u, v, i, j) for one (M, N) channel, in pure Python."""
    m, n = img.shape
    out = np.zeros((m, n))
    for u in range(m):
        for v in range(n):
            s = 0.0
            for i in range(m):
                for j in range(n):
                    s += img[i, j] * math.cos(math.pi * (2 * i + 1) * u / (2 * m)) * math.cos(
                        math.pi * (2 * j + 1) * v / (2 * n)
                    )
            out[u, v] = _alpha(u, m) * _alpha(v, n) * s
    return out


@lru_cache(maxsize=None)
def _basis(m, n):
    """basis[u, v, i, j] = alpha(u) alpha(v) cos(.) cos(.), built entry-wise from the definition."""
    u = np.arange(m)[:, None, None, None]
    v = np.arange(n)[None, :, None, None]
    i = np.arange(m)[None, None, :, None]
    j = np.arange(n)[None, None, None, :]
    au = np.where(u == 0, np.sqrt(1.0 / m), np.sqrt(2.0 / m))
    av = np.where(v == 0, np.sqrt(1.0 / n), np.sqrt(2.0 / n))
    return au * av * np.cos(np.pi * (2 * i + 1) * u / (2 * m)) * np.cos(np.pi * (2 * j + 1) * v / (2 * n))


def dct2d_direct(img):
    """Direct double sum over all pixels for every coefficient of a ``(C, M, N)`` image."""
    m, n = img.shape[-2:]
    return np.einsum("uvij,cij->cuv", _basis(m, n), img)


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    c = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            c[i, j] = s
    return c


def conv2d_loops(x, w, stride=1, padding=None):
    """Sliding-window conv of ``(Cin, H, W)`` with ``(Cout, Cin, k, k)``; six nested loops."""
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = (k - 1) // 2 if padding is None else padding
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for y in range(ho):
            for xx in range(wo):
                s = 0.0
                for c in range(cin):
                    for i in range(k):
                        for j in range(k):
                            r, q = y * stride + i - p, xx * stride + j - p
                            if 0 <= r < h and 0 <= q < wd:
                                s += x[c, r, q] * w[o, c, i, j]
                out[o, y, xx] = s
    return out


def depthwise_loops(x, w, stride=1):
    """Depthwise conv as ``C`` independent single-channel conv2d oracles."""
    return np.concatenate(
        [conv2d_loops(x[c : c + 1], w[c][None, None], stride) for c in range(x.shape[0])], axis=0
    )


def softmax_rows(s):
    out = np.zeros_like(s)
    for i, row in enumerate(s):
        e = [math.exp(v - max(row)) for v in row]
        t = sum(e)
        out[i] = [v / t for v in e]
    return out


def attention(q, k, v):
    d = q.shape[1]
    scores = np.array([[sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d) for j in range(k.shape[0])] for i in range(q.shape[0])])
    w = softmax_rows(scores)
    return matmul_loops(w, v), w


def cga_two_heads(x, wq, wk, wv, proj):
    """Cascaded group attention with h=2, written out head by head.

    ``x`` is ``(L, C)``; ``wq[i]``, ``wk[i]``, ``wv[i]`` are per-head ``(C/2, d)``.
    """
    g = x.shape[1] // 2
    in0 = x[:, :g]
    out0, _ = attention(matmul_loops(in0, wq[0]), matmul_loops(in0, wk[0]), matmul_loops(in0, wv[0]))
    in1 = x[:, g:] + out0
    out1, _ = attention(matmul_loops(in1, wq[1]), matmul_loops(in1, wk[1]), matmul_loops(in1, wv[1]))
    return matmul_loops(np.concatenate([out0, out1], axis=1), proj)


def cross_entropy(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)
