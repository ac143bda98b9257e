"""Slow, obviously-correct reference implementations.

Nothing here calls into ``gess.kernels`` or the vectorised paths it checks;
the loops are written out so they can be read against the definitions.
"""
import math

import numpy as np


def conv2d_loops(x, kernel, bias, stride=1, padding=0):
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for y in range(ho):
            for xx in range(wo):
                acc = float(bias[o])
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            sy = y * stride + i - padding
                            sx = xx * stride + j - padding
                            if 0 <= sy < h and 0 <= sx < w:
                                acc += float(kernel[o, c, i, j]) * float(x[c, sy, sx])
                out[o, y, xx] = acc
    return out


def nms_brute(k, radius):
    h, w = k.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            wins = True
            for qy in range(max(0, y - radius), min(h, y + radius + 1)):
                for qx in range(max(0, x - radius), min(w, x + radius + 1)):
                    if (qy, qx) == (y, x):
                        continue
                    if k[qy, qx] > k[y, x]:
                        wins = False
                    elif k[qy, qx] == k[y, x] and qy * w + qx < y * w + x:
                        wins = False
            if wins:
                out[y, x] = k[y, x]
    return out


def extract_brute(k, radius, threshold, margin, top_k):
    s = nms_brute(k, radius)
    h, w = s.shape
    cands = []
    for y in range(h):
        for x in range(w):
            if s[y, x] > threshold and margin <= x <= w - 1 - margin and margin <= y <= h - 1 - margin:
                cands.append((-s[y, x], y, x))
    cands.sort()
    return [(x, y, -neg) for neg, y, x in cands[:top_k]]


def nearest_brute(a, b):
    out = []
    for i in range(len(a)):
        best, best_d = 0, math.inf
        for j in range(len(b)):
            d = math.sqrt(sum((float(a[i, c]) - float(b[j, c])) ** 2 for c in range(a.shape[1])))
            if d < best_d:
                best, best_d = j, d
        out.append((best, best_d))
    return out


def nn_match_brute(a, b, mutual=True):
    ab = nearest_brute(a, b)
    ba = nearest_brute(b, a) if mutual else None
    out = []
    for i, (j, d) in enumerate(ab):
        if not mutual or ba[j][0] == i:
            out.append((i, j, d))
    return out


def auc_riemann(errors, t, n=100_000):
    """Midpoint Riemann sum of the empirical CDF over ``[0, t]``, divided by ``t``."""
    e = np.sort(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        return 0.0
    mids = (np.arange(n) + 0.5) * (t / n)
    cdf = np.searchsorted(e, mids, side="right") / e.size
    return float(cdf.sum() * (t / n) / t)


def bilinear_point(fmap, x, y):
    c, h, w = fmap.shape
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return np.array([
        (1 - fy) * ((1 - fx) * fmap[ch, y0, x0] + fx * fmap[ch, y0, x1])
        + fy * ((1 - fx) * fmap[ch, y1, x0] + fx * fmap[ch, y1, x1])
        for ch in range(c)
    ])


def resample_formula(x, out_h, out_w):
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for oy in range(out_h):
        sy = oy * (h - 1) / (out_h - 1) if out_h > 1 else (h - 1) / 2
        for ox in range(out_w):
            sx = ox * (w - 1) / (out_w - 1) if out_w > 1 else (w - 1) / 2
            out[:, oy, ox] = bilinear_point(np.asarray(x, np.float64), sx, sy)
    return out


def softmax_pixel(logits):
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    z = sum(e)
    return [v / z for v in e]


def sigmoid_scalar(v):
    return 1.0 / (1.0 + math.exp(-v))


def mma_count(errors, thresholds):
    if len(errors) == 0:
        return [0.0] * len(thresholds)
    return [sum(1 for e in errors if e <= t) / len(errors) for t in thresholds]


def toy_pair_mma(img_a, img_b, H, radius, threshold, margin, top_k, thresholds):
    """End-to-end toy pipeline built only from the loops above plus the toy maps."""
    from gess.evalkit import toy_descriptor_map, toy_heatmap

    sets = []
    for img in (img_a, img_b):
        kps = extract_brute(toy_heatmap(img), radius, threshold, margin, top_k)
        dmap = toy_descriptor_map(img)
        descs = []
        for x, y, _ in kps:
            v = dmap[:, y, x]
            n = math.sqrt(float(np.dot(v, v)))
            if n > 0:
                descs.append(v / n)
            else:
                e0 = np.zeros_like(v)
                e0[0] = 1.0
                descs.append(e0)
        sets.append((kps, np.array(descs)))
    (ka, da), (kb, db) = sets
    errors = []
    for i, j, _ in nn_match_brute(da, db, mutual=True):
        xa, ya, _ = ka[i]
        w = H[2, 0] * xa + H[2, 1] * ya + H[2, 2]
        px = (H[0, 0] * xa + H[0, 1] * ya + H[0, 2]) / w
        py = (H[1, 0] * xa + H[1, 1] * ya + H[1, 2]) / w
        errors.append(math.hypot(px - kb[j][0], py - kb[j][1]))
    return mma_count(errors, thresholds), errors
