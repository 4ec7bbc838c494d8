"""Independent brute-force references used by the tests."""
from fractions import Fraction

import mpmath
import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv_loops(x, w, b):
    B, C, H, W = x.shape
    F = w.shape[0]
    out = np.zeros((B, F, H, W))
    for n in range(B):
        for f in range(F):
            for h in range(H):
                for v in range(W):
                    s = b[f]
                    for c in range(C):
                        for i in range(3):
                            for j in range(3):
                                hh, vv = h + i - 1, v + j - 1
                                if 0 <= hh < H and 0 <= vv < W:
                                    s += w[f, c, i, j] * x[n, c, hh, vv]
                    out[n, f, h, v] = s
    return out


def maxpool_loops(x):
    B, C, H, W = x.shape
    out = np.zeros((B, C, H // 2, W // 2))
    for n in range(B):
        for c in range(C):
            for i in range(H // 2):
                for j in range(W // 2):
                    out[n, c, i, j] = max(x[n, c, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2))
    return out


def cross_entropy_mp(logits, labels, dps=50):
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for row, y in zip(logits, labels):
            lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in row))
            total += lse - mpmath.mpf(float(row[y]))
        return float(total / len(labels))


def kappa_sum(counts):
    counts = np.asarray(counts, dtype=float)
    n = counts.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += counts[i, j]
    agree = sum(counts[i, i] for i in range(n)) / total
    chance = 0.0
    for c in range(n):
        row = sum(counts[c, j] for j in range(n))
        col = sum(counts[i, c] for i in range(n))
        chance += row * col / (total * total)
    return (agree - chance) / (1 - chance)


def miou_sets(truth, pred, n, ignore=()):
    """Per-pixel set intersection/union over flattened grids."""
    truth = np.asarray(truth).ravel()
    pred = np.asarray(pred).ravel()
    ious = []
    for c in range(n):
        if c in ignore:
            continue
        t = {i for i, v in enumerate(truth) if v == c}
        p = {i for i, v in enumerate(pred) if v == c}
        union = t | p
        if union:
            ious.append(Fraction(len(t & p), len(union)))
    return float(sum(ious) / len(ious))
