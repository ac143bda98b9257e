"""Pure-Python (numpy) versions of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
semantics; ``gess.kernels`` picks one at import time. Inputs are float64 and
C-contiguous; callers in ``gess.kernels`` take care of that.
"""
import numpy as np

# rows of A processed per block in nearest_neighbors; bounds peak memory
_NN_BLOCK_ELEMS = 1 << 22


def conv2d(x, weight, bias, stride, padding):
    c_out, c_in, kh, kw = weight.shape
    _, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    out = np.empty((c_out, ho, wo), dtype=np.float64)
    out[:] = bias[:, None, None]
    for i in range(kh):
        for j in range(kw):
            window = xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
            out += np.tensordot(weight[:, :, i, j], window, axes=([1], [0]))
    return out


def nms(scores, radius):
    h, w = scores.shape
    r = radius
    padded = np.full((h + 2 * r, w + 2 * r), -np.inf)
    padded[r:r + h, r:r + w] = scores
    keep = np.ones((h, w), dtype=bool)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            # a neighbour earlier in row-major order wins ties
            earlier = dy < 0 or (dy == 0 and dx < 0)
            if earlier:
                keep &= nb < scores
            else:
                keep &= nb <= scores
    return np.where(keep, scores, 0.0)


def nearest_neighbors(a, b):
    na, c = a.shape
    nb = b.shape[0]
    idx = np.empty(na, dtype=np.int64)
    dist = np.empty(na, dtype=np.float64)
    block = max(1, _NN_BLOCK_ELEMS // max(1, nb * c))
    for start in range(0, na, block):
        stop = min(na, start + block)
        diff = a[start:stop, None, :] - b[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        j = np.argmin(d2, axis=1)
        idx[start:stop] = j
        dist[start:stop] = d2[np.arange(stop - start), j]
    return idx, dist


def bilinear_sample(fmap, xy):
    c, h, w = fmap.shape
    x = xy[:, 0]
    y = xy[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    top = fmap[:, y0, x0] * (1 - wx) + fmap[:, y0, x1] * wx
    bot = fmap[:, y1, x0] * (1 - wx) + fmap[:, y1, x1] * wx
    return np.ascontiguousarray((top * (1 - wy) + bot * wy).T)
