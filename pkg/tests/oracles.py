"""Slow, literal reference implementations used as test oracles."""

import math

import numpy as np


def naive_sq_dist(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += (a[i, j] - b[i, j]) ** 2
    return s


def naive_sharpness(p):
    s = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1] - 1):
            s += abs(p[i, j + 1] - p[i, j])
    for i in range(p.shape[0] - 1):
        for j in range(p.shape[1]):
            s += abs(p[i + 1, j] - p[i, j])
    return s


def np_sq_dist(a, b):
    d = a - b
    return float(np.sum(d * d))


def naive_min_distance(seq, r, t, dt, patch, search, dist=np_sq_dist):
    """Exhaustive scan of patch distances over the clipped search window.

    The default distance sums like the library's, so minima compare exactly.
    """
    H, W = seq.shape[1:]
    half, s = patch // 2, search // 2
    y, x = r
    a = seq[t, y - half:y + half + 1, x - half:x + half + 1]
    best = math.inf
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            yy, xx = y + dy, x + dx
            if yy - half < 0 or xx - half < 0 or yy + half >= H or xx + half >= W:
                continue
            b = seq[t + dt, yy - half:yy + half + 1, xx - half:xx + half + 1]
            best = min(best, dist(a, b))
    return best


def rc1(n):
    return [0.5 - 0.5 * math.cos(2 * math.pi * (i + 0.5) / n) for i in range(n)]


def starts(length, patch, stride):
    out = list(range(0, length - patch + 1, stride))
    if out[-1] != length - patch:
        out.append(length - patch)
    return out


def blend_scalar(frames, logw, patch, stride):
    """Weighted patch averages blended by raised-cosine windows, pixel by pixel.

    ``logw[k][(y, x)]`` is the log weight of frame k for the patch at (y, x).
    """
    H, W = frames[0].shape
    w1 = rc1(patch)
    num = [[0.0] * W for _ in range(H)]
    den = [[0.0] * W for _ in range(H)]
    for y in starts(H, patch, stride):
        for x in starts(W, patch, stride):
            lw = [logw[k][(y, x)] for k in range(len(frames))]
            m = max(lw)
            ws = [math.exp(v - m) for v in lw]
            tot = sum(ws)
            for i in range(patch):
                for j in range(patch):
                    val = sum(ws[k] * frames[k][y + i, x + j] for k in range(len(frames))) / tot
                    win = w1[i] * w1[j]
                    num[y + i][x + j] += win * val
                    den[y + i][x + j] += win
    return np.array([[num[i][j] / den[i][j] for j in range(W)] for i in range(H)])


def scalar_reference(seq, t, patch, search, stride, beta, window):
    """Reference frame at ``t`` from per-patch exhaustive scans and scalar blending."""
    T, H, W = seq.shape
    half = patch // 2
    offsets = [s - t for s in range(max(0, t - window), min(T, t + window + 1))]
    logw = []
    for dt in offsets:
        lw = {}
        for y in starts(H, patch, stride):
            for x in starts(W, patch, stride):
                d = 0.0 if dt == 0 else naive_min_distance(seq, (y + half, x + half), t, dt,
                                                          patch, search)
                lw[(y, x)] = -beta * d
        logw.append(lw)
    return blend_scalar([seq[t + dt] for dt in offsets], logw, patch, stride)


def scalar_lucky(aligned, refs, t, a1, a2, patch, stride, window):
    """Lucky frame at ``t`` from loop-computed scores and scalar blending."""
    T, H, W = aligned.shape
    idx = range(max(0, t - window), min(T, t + window + 1))
    logw = []
    for k in idx:
        lw = {}
        for y in starts(H, patch, stride):
            for x in starts(W, patch, stride):
                pf = aligned[k, y:y + patch, x:x + patch]
                pr = refs[k, y:y + patch, x:x + patch]
                lw[(y, x)] = -a1 * naive_sq_dist(pf, pr) + a2 * naive_sharpness(pf)
        logw.append(lw)
    return blend_scalar([aligned[k] for k in idx], logw, patch, stride)
